"""Command line entry point: ``agfem validate|convergence|moving-domain``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from .experiments import load_config, run_convergence, run_moving_domain, run_validate


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agfem", description="Aggregated unfitted FE experiments")
    p.add_argument("command", choices=["validate", "convergence", "moving-domain"])
    p.add_argument("--config", help="key = value file with RunConfig fields")
    p.add_argument("--dim", type=int)
    p.add_argument("--order", type=int, dest="q")
    p.add_argument("--flavor", choices=["standard", "aggregated"])
    p.add_argument("--beta", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--subdiv", type=int)
    p.add_argument("--shape", choices=["circle", "sphere", "popcorn"])
    p.add_argument("--m", type=int, help="mesh level h = 2^-m (validate, moving-domain)")
    p.add_argument("--max-m", type=int, dest="max_m")
    p.add_argument("--samples", type=int, dest="n_samples")
    p.add_argument("--mass-kappa", action="store_true", default=None, dest="mass_kappa")
    p.add_argument("--vtk", action="store_true", default=None)
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "verbose")}
    cfg = load_config(args.config, **overrides)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)

    if args.command == "validate":
        checks = run_validate(cfg)
        for c in checks:
            print(c.line())
        failed = [c for c in checks if not c.passed]
        print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
        return 1 if failed else 0

    if args.command == "convergence":
        rows, slopes = run_convergence(cfg)
        for r in rows:
            print(f"h={r['h']:.4g} dofs={r['dofs']} kappa={r['kappa_A']:.3e} "
                  f"E={r['energy_error']:.3e} L2={r['l2_error']:.3e} H/h={r['max_aggr_ratio']:.2f}")
        print("slopes: " + " ".join(f"{k}={v:.3f}" for k, v in slopes.items()))
        return 0 if all(r["solved"] for r in rows) else 1

    rows = run_moving_domain(cfg)
    kap = [r["kappa_A"] for r in rows if math.isfinite(r["kappa_A"])]
    if kap:
        print(f"{len(rows)} positions, kappa in [{min(kap):.3e}, {max(kap):.3e}], "
              f"spread {max(kap) / min(kap):.3e}")
    print(f"solved {sum(r['solved'] for r in rows)}/{len(rows)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Refinement study on the benchmark body: errors, kappa(A), dofs and H/h.

    python3 scripts/run_convergence.py --dim 2 --orders 1 2
    python3 scripts/run_convergence.py --dim 3 --max-m 5 --vtk
"""
import argparse
import logging

from agfem.experiments import RunConfig, run_convergence


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--orders", type=int, nargs="+", default=[1, 2])
    p.add_argument("--flavor", default="aggregated", choices=["aggregated", "standard"])
    p.add_argument("--min-m", type=int, default=3)
    p.add_argument("--max-m", type=int, default=None, help="finest level (default 9 in 2D, 6 in 3D)")
    p.add_argument("--kappa-max-dofs", type=int, default=400_000,
                   help="skip the kappa estimate above this many unknowns")
    p.add_argument("--mass-kappa", action="store_true")
    p.add_argument("--vtk", action="store_true", help="export the finest solution")
    p.add_argument("--out", default="out")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    for q in args.orders:
        cfg = RunConfig(dim=args.dim, q=q, flavor=args.flavor, m_min=args.min_m, max_m=args.max_m,
                        kappa_max_dofs=args.kappa_max_dofs, mass_kappa=args.mass_kappa,
                        vtk=args.vtk, out=args.out,
                        solver="cg" if args.dim == 3 else "direct")
        rows, slopes = run_convergence(cfg)
        print(f"q={q}")
        print(f"{'h':>10} {'dofs':>9} {'kappa_A':>10} {'energy':>10} {'L2':>10} {'H/h':>5}")
        for r in rows:
            print(f"{r['h']:10.4g} {r['dofs']:9d} {r['kappa_A']:10.3e} {r['energy_error']:10.3e} "
                  f"{r['l2_error']:10.3e} {r['max_aggr_ratio']:5.2f}")
        note = "two coarsest dropped" if len(rows) >= 4 else "all meshes"
        print(f"slopes ({note}): "
              + ", ".join(f"{k} {v:.3f}" for k, v in slopes.items()), flush=True)


if __name__ == "__main__":
    main()

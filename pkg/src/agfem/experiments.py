"""Moving-domain and convergence studies, plus a self-check suite.

Every run goes through :func:`run_case`: classify, aggregate (aggregated
flavour only), build the cut quadrature, assemble, solve, measure errors and
estimate condition numbers.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .aggregation import aggregate_cells, max_aggregate_size, node_to_root, write_aggregate_csv
from .assembly import NitscheParams, assemble_mass, assemble_stiffness
from .error_norms import compute_errors
from .fespace import (build_constraints, build_space, extend, extension_norm_bound,
                      interpolate, tensor_basis)
from .geometry import affine_solution, builtin_shapes, manufactured
from .mesh import classify_cells, unit_box_mesh
from .quadrature import build_cut_quadrature, domain_measures
from .spectral import cond_estimate, solve_cg, solve_direct

log = logging.getLogger(__name__)

MOVING_HEADER = ["l", "kappa_A", "energy_error", "solved"]
CONVERGENCE_HEADER = ["h", "dofs", "kappa_A", "energy_error", "l2_error", "max_aggr_ratio"]


@dataclass
class RunConfig:
    """Run parameters; defaults reproduce the benchmark setup in [0,1]^d."""
    dim: int = 2
    shape: Optional[str] = None       # circle (2D) / sphere (3D) by default
    q: int = 1
    flavor: str = "aggregated"
    m: int = 5                        # h = 2^-m for single runs and the moving domain
    beta: float = 100.0
    eps: Optional[float] = None       # cut snapping tolerance; per-dimension default
    subdiv: Optional[int] = None      # cut subdivision depth; per-order default
    eta0: float = 1.0
    tau_rule: Optional[str] = None    # fixed beta/h (aggregated) or local eigenvalue (standard)
    solver: str = "direct"            # direct | cg
    # moving domain
    n_samples: int = 200
    scale: float = 0.25
    center_min: float = 0.2           # body centre along the diagonal, as a fraction
    center_max: float = 0.8
    mass_kappa: bool = False
    # convergence
    m_min: int = 3
    max_m: Optional[int] = None       # 9 in 2D, 6 in 3D
    estimate_kappa: bool = True
    kappa_max_dofs: int = 400_000
    aggr_measure: str = "extent"      # H in the H/h column: largest side or diagonal
    # output
    out: str = "out"
    vtk: bool = False
    seed: int = 0
    # negative-control hook for the validation suite
    corrupt_constraints: bool = False

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.flavor not in ("standard", "aggregated"):
            raise ValueError(f"unknown flavor {self.flavor!r}")
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if self.solver not in ("direct", "cg"):
            raise ValueError(f"unknown solver {self.solver!r}")

    @property
    def shape_name(self) -> str:
        if self.shape is not None:
            return self.shape
        return "circle" if self.dim == 2 else "sphere"

    @property
    def last_m(self) -> int:
        if self.max_m is not None:
            return self.max_m
        return 9 if self.dim == 2 else 6

    @property
    def nitsche(self) -> NitscheParams:
        rule = self.tau_rule
        if rule is None:
            rule = "fixed_beta_over_h" if self.flavor == "aggregated" else "local_eigenvalue"
        return NitscheParams(beta=self.beta, rule=rule)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def _cast(tp, text: str):
    text = text.strip()
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        if text.lower() in ("", "none", "null"):
            return None
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
    if tp is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return tp(text)


def load_config(path, **overrides) -> RunConfig:
    """Read ``key = value`` lines (``#`` comments) into a RunConfig."""
    hints = typing.get_type_hints(RunConfig)
    values = {}
    if path is not None:
        for n, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in hints:
                raise ValueError(f"{path}:{n}: unknown key {key!r}")
            values[key] = _cast(hints[key], val)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


# ------------------------------------------------------------------ pipeline

@dataclass
class CaseResult:
    h: float
    dofs: int = 0
    kappa_A: float = math.nan
    kappa_M: float = math.nan
    energy_error: float = math.nan
    l2_error: float = math.nan
    max_aggr_ratio: float = math.nan
    solved: bool = False
    seconds: float = 0.0
    error: str = ""
    state: dict = field(default_factory=dict, repr=False)


def run_case(cfg: RunConfig, m: int, geom=None, exact=None, estimate_kappa: bool = True,
             mass_kappa: bool = False, keep_state: bool = False) -> CaseResult:
    """Full pipeline on the 2^-m background mesh. Failures are recorded, not raised."""
    t0 = time.perf_counter()
    if geom is None:
        geom = builtin_shapes(cfg.shape_name, eps=cfg.eps, dim=cfg.dim)
    elif cfg.eps is not None:
        geom = geom.with_eps(cfg.eps)
    exact = manufactured(cfg.dim) if exact is None else exact
    mesh = unit_box_mesh(cfg.dim, 2 ** m)
    res = CaseResult(h=mesh.h_max)
    try:
        mesh = classify_cells(mesh, geom)
        constraints = amap = None
        if cfg.flavor == "aggregated":
            amap = aggregate_cells(mesh, geom, eta0=cfg.eta0)
            mesh = amap.mesh
            space = build_space(mesh, cfg.q, "aggregated")
            constraints = build_constraints(space, None, node_to_root(amap, mesh, space))
            if cfg.corrupt_constraints and constraints.n_out:
                constraints.coefs[0, 0] += 0.5
            res.max_aggr_ratio = max_aggregate_size(amap, measure=cfg.aggr_measure) / mesh.h_max
        else:
            space = build_space(mesh, cfg.q, "active")
        quad = build_cut_quadrature(mesh, geom, q=cfg.q, subdiv=cfg.subdiv)
        system = assemble_stiffness(space, quad, cfg.nitsche, exact.u, exact.f,
                                    constraints=constraints)
        res.dofs = system.n
        if cfg.solver == "direct":
            rep = solve_direct(system.A, system.b)
        else:
            rep = solve_cg(system.A, system.b, precond="jacobi")
        res.solved = rep.converged
        if np.all(np.isfinite(rep.x)):
            qerr = build_cut_quadrature(mesh, geom, q=cfg.q, degree=quad.degree + 2,
                                        subdiv=quad.subdivision_depth)
            err = compute_errors(space, qerr, rep.x, exact, constraints=constraints)
            res.energy_error, res.l2_error = err.energy_error, err.l2_error
        if estimate_kappa and system.n <= cfg.kappa_max_dofs:
            res.kappa_A = cond_estimate(system.A, solver="direct", seed=cfg.seed).kappa
        if mass_kappa:
            M = assemble_mass(space, quad, constraints=constraints)
            res.kappa_M = cond_estimate(M, solver="direct", seed=cfg.seed).kappa
        if keep_state:
            u_act = rep.x if constraints is None else extend(constraints, rep.x)
            res.state = dict(mesh=mesh, geom=geom, quad=quad, space=space, amap=amap,
                             constraints=constraints, system=system, u_act=u_act)
    except (ValueError, FloatingPointError, ArithmeticError, AssertionError) as err:
        log.warning("m=%d failed: %s", m, err)
        res.error = str(err)
        res.solved = False
    res.seconds = time.perf_counter() - t0
    return res


def moving_domain_positions(cfg: RunConfig) -> np.ndarray:
    """Distances l from the origin vertex to the body centre along the diagonal."""
    c = np.linspace(cfg.center_min, cfg.center_max, cfg.n_samples)
    return c * math.sqrt(cfg.dim)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in r])


def run_moving_domain(cfg: RunConfig, write: bool = True) -> list[dict]:
    """Sweep the scaled body along the box diagonal on a fixed mesh.

    Returns one dict per position with ``l, kappa_A, energy_error, solved``
    and ``kappa_M`` (NaN unless ``cfg.mass_kappa``).
    """
    shape = cfg.shape or ("circle" if cfg.dim == 2 else "popcorn")
    rows = []
    for l in moving_domain_positions(cfg):
        geom = builtin_shapes(shape, scale=cfg.scale, l=float(l), eps=cfg.eps, dim=cfg.dim)
        r = run_case(cfg, cfg.m, geom=geom, mass_kappa=cfg.mass_kappa)
        rows.append(dict(l=float(l), kappa_A=r.kappa_A, energy_error=r.energy_error,
                         solved=r.solved, kappa_M=r.kappa_M))
        log.info("l=%.4f kappa=%.3e err=%.3e solved=%s (%.1fs)", l, r.kappa_A,
                 r.energy_error, r.solved, r.seconds)
    if write:
        out = Path(cfg.out) / f"moving_domain_{cfg.dim}d_{shape}_q{cfg.q}_{cfg.flavor}.csv"
        _write_csv(out, MOVING_HEADER, ([r[k] for k in MOVING_HEADER] for r in rows))
    return rows


def loglog_slope(h, y, skip: int = 0) -> float:
    """Least-squares slope of log y against log h over finite, positive entries."""
    h = np.asarray(h, dtype=float)[skip:]
    y = np.asarray(y, dtype=float)[skip:]
    ok = np.isfinite(y) & (y > 0) & np.isfinite(h) & (h > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(h[ok]), np.log(y[ok]), 1)[0])


def run_convergence(cfg: RunConfig, write: bool = True, skip: int = 2):
    """Refinement study on the full-scale benchmark.

    Returns ``(rows, slopes)``; slopes are fitted without the ``skip``
    coarsest meshes (all meshes if fewer than two would remain).
    """
    rows = []
    ms = list(range(cfg.m_min, cfg.last_m + 1))
    for m in ms:
        r = run_case(cfg, m, estimate_kappa=cfg.estimate_kappa, mass_kappa=cfg.mass_kappa,
                     keep_state=cfg.vtk and m == ms[-1])
        rows.append(dict(h=r.h, dofs=r.dofs, kappa_A=r.kappa_A, energy_error=r.energy_error,
                         l2_error=r.l2_error, max_aggr_ratio=r.max_aggr_ratio,
                         kappa_M=r.kappa_M, solved=r.solved))
        log.info("m=%d dofs=%d kappa=%.3e E=%.3e L2=%.3e (%.1fs)", m, r.dofs, r.kappa_A,
                 r.energy_error, r.l2_error, r.seconds)
        if r.state and cfg.vtk:
            from .vtk import export_vtk
            st = r.state
            base = Path(cfg.out) / f"convergence_{cfg.dim}d_q{cfg.q}_{cfg.flavor}_m{m}"
            base.parent.mkdir(parents=True, exist_ok=True)
            export_vtk(st["mesh"], st["geom"], st["quad"], st["u_act"], base.with_suffix(".vtk"),
                       space=st["space"], amap=st["amap"])
            if st["amap"] is not None:
                write_aggregate_csv(st["amap"], base.with_name(base.name + "_aggregates.csv"))
    k = skip if len(rows) - skip >= 2 else 0
    h = [r["h"] for r in rows]
    slopes = {key: loglog_slope(h, [r[key] for r in rows], k)
              for key in ("dofs", "kappa_A", "energy_error", "l2_error")}
    if write:
        out = Path(cfg.out) / f"convergence_{cfg.dim}d_{cfg.shape_name}_q{cfg.q}_{cfg.flavor}.csv"
        body = [[r[c] for c in CONVERGENCE_HEADER] for r in rows]
        footer = ["slope", _fmt(slopes["dofs"]), _fmt(slopes["kappa_A"]),
                  _fmt(slopes["energy_error"]), _fmt(slopes["l2_error"]), ""]
        _write_csv(out, CONVERGENCE_HEADER, body + [footer])
    return rows, slopes


# ---------------------------------------------------------------- validation

@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3e} (tol {self.tol:.1e})"


def _check(name, value, tol) -> Check:
    return Check(name, float(value), tol, bool(np.isfinite(value) and value <= tol))


def run_validate(cfg: RunConfig) -> list[Check]:
    """Invariant checks on the benchmark geometry; see :class:`Check`."""
    d = cfg.dim
    checks = []
    geom = builtin_shapes(cfg.shape_name, eps=cfg.eps, dim=d)
    mesh = classify_cells(unit_box_mesh(d, 2 ** cfg.m), geom)

    if geom.name in ("circle", "sphere"):
        r = geom.extent
        vol_exact = math.pi * r * r if d == 2 else 4.0 / 3.0 * math.pi * r ** 3
        surf_exact = 2.0 * math.pi * r if d == 2 else 4.0 * math.pi * r * r
        vol, surf = domain_measures(mesh, geom, q=cfg.q, r=cfg.subdiv)
        checks.append(_check("volume rel. error", abs(vol - vol_exact) / vol_exact, 1e-2))
        checks.append(_check("surface rel. error", abs(surf - surf_exact) / surf_exact, 1e-2))

    amap = aggregate_cells(mesh, geom, eta0=cfg.eta0)
    mesh = amap.mesh
    space = build_space(mesh, cfg.q, "aggregated")
    cons = build_constraints(space, None, node_to_root(amap, mesh, space))
    if cfg.corrupt_constraints and cons.n_out:
        cons.coefs[0, 0] += 0.5

    sums = np.asarray(cons.C.sum(axis=1)).ravel()
    checks.append(_check("constraint row sums", np.max(np.abs(sums - 1.0), initial=0.0), 1e-12))

    # reproduction of every monomial of degree <= q by the extension
    worst = 0.0
    for powers in np.ndindex(*(cfg.q + 1,) * d):
        if sum(powers) > cfg.q:
            continue
        def mono(x, p=powers):
            return np.prod(x ** np.asarray(p), axis=1)
        u = interpolate(space, mono, cons)
        worst = max(worst, np.max(np.abs(u - mono(space.dof_coords()))))
    checks.append(_check("polynomial reproduction", worst, 1e-10))

    # partition of unity of the local basis at random points
    xi = np.random.default_rng(cfg.seed).random((64, d))
    vals, _ = tensor_basis(cfg.q, xi)
    checks.append(_check("partition of unity", np.max(np.abs(vals.sum(axis=1) - 1.0)), 1e-12))

    # the computable ||E||^2 bound must dominate a power-iteration estimate
    E = cons.E
    bound = extension_norm_bound(cons, space)
    v = np.random.default_rng(cfg.seed).standard_normal(cons.n_in)
    for _ in range(200):
        w = E.T @ (E @ v)
        v = w / np.linalg.norm(w)
    est = float(v @ (E.T @ (E @ v)))
    checks.append(_check("extension norm below bound", max(0.0, est - bound) / bound, 1e-12))

    # patch test: an affine solution is reproduced exactly
    coeffs = np.arange(1, d + 1, dtype=float)
    ex = affine_solution(coeffs, 0.5)
    quad = build_cut_quadrature(mesh, geom, q=cfg.q, subdiv=cfg.subdiv)
    system = assemble_stiffness(space, quad, cfg.replace(flavor="aggregated").nitsche,
                                ex.u, ex.f, constraints=cons)
    rep = solve_direct(system.A, system.b)
    err = compute_errors(space, quad, rep.x, ex, constraints=cons)
    checks.append(_check("patch test energy error", err.energy_error, 1e-9))
    return checks

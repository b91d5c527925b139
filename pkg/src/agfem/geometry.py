"""Implicit geometry: level-set domains, edge roots and the benchmark shapes.

A domain is the open set ``{x : psi(x) < 0}``. All level-set callables take an
array of points with shape ``(..., dim)`` and return an array of shape ``(...)``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

Field = Callable[[np.ndarray], np.ndarray]

DEFAULT_EPS = {2: 1e-6, 3: 1e-3}

# Popcorn flake constants (reference frame, flake centred at the origin).
POPCORN_R0 = 0.6
POPCORN_AMPLITUDE = 2.0
POPCORN_SIGMA = 0.2
# Reference-frame radius of the smallest ball containing the flake is ~0.88;
# scale 1 maps the reference frame by this factor into the unit box.
POPCORN_FRAME = 0.5
# Radius of the full-scale circle / sphere benchmark.
BENCHMARK_RADIUS = 0.45


@dataclass(frozen=True)
class LevelSetGeometry:
    psi: Field
    dim: int
    grad_psi: Optional[Field] = None
    snap_tolerance_eps: float = 0.0
    name: str = "custom"
    # centre and half-extent of a ball containing the body (used for sweeps)
    center: Optional[tuple] = None
    extent: Optional[float] = None

    def __call__(self, x) -> np.ndarray:
        return self.psi(np.asarray(x, dtype=float))

    def with_eps(self, eps: float) -> "LevelSetGeometry":
        return replace(self, snap_tolerance_eps=float(eps))


@dataclass(frozen=True)
class ManufacturedSolution:
    u: Field
    grad_u: Field
    f: Field
    dim: int


def eval_levelset(geom: LevelSetGeometry, x) -> np.ndarray:
    """Evaluate psi; negative inside, zero on the boundary, positive outside."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite evaluation point")
    return geom.psi(x)


def edge_roots(psi: Field, a: np.ndarray, b: np.ndarray,
               fa: Optional[np.ndarray] = None, fb: Optional[np.ndarray] = None,
               eps: float = 0.0, bisect_steps: int = 16,
               max_secant: int = 60) -> np.ndarray:
    """Vectorised root of psi on the segments ``a[i] -> b[i]``.

    Returns the parameter ``t`` in [0, 1] of the zero crossing, or NaN where
    ``fa * fb > 0``. ``fa``/``fb`` override the end-point values, which lets
    callers feed snapped vertex values. Roots closer than ``eps`` to an end
    point are collapsed onto it.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    fa = psi(a) if fa is None else np.asarray(fa, dtype=float).reshape(-1)
    fb = psi(b) if fb is None else np.asarray(fb, dtype=float).reshape(-1)
    n = a.shape[0]
    t = np.full(n, np.nan)

    at_a = fa == 0.0
    at_b = (fb == 0.0) & ~at_a
    t[at_a] = 0.0
    t[at_b] = 1.0
    todo = np.flatnonzero((fa * fb < 0.0))
    if todo.size:
        t[todo] = _bracketed_root(psi, a[todo], b[todo], fa[todo], fb[todo],
                                  bisect_steps, max_secant)
    if eps > 0.0:
        t = np.where(t < eps, 0.0, t)
        t = np.where(t > 1.0 - eps, 1.0, t)
    return t


def _bracketed_root(psi, a, b, fa, fb, bisect_steps, max_secant):
    d = b - a
    lo = np.zeros(len(a))
    hi = np.ones(len(a))
    flo = fa.copy()
    fhi = fb.copy()
    scale = np.abs(fa) + np.abs(fb)

    for _ in range(bisect_steps):
        mid = 0.5 * (lo + hi)
        fm = psi(a + mid[:, None] * d)
        left = np.sign(fm) == np.sign(flo)
        lo = np.where(left, mid, lo)
        flo = np.where(left, fm, flo)
        hi = np.where(left, hi, mid)
        fhi = np.where(left, fhi, fm)

    # Illinois-modified secant inside the bracket
    best_t = np.where(np.abs(flo) <= np.abs(fhi), lo, hi)
    best_f = np.minimum(np.abs(flo), np.abs(fhi))
    side = np.zeros(len(a), dtype=int)
    active = np.ones(len(a), dtype=bool)
    for _ in range(max_secant):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        l, h, fl, fh = lo[idx], hi[idx], flo[idx], fhi[idx]
        denom = fh - fl
        ts = np.where(denom != 0.0, l - fl * (h - l) / np.where(denom != 0.0, denom, 1.0),
                      0.5 * (l + h))
        ts = np.clip(ts, l, h)
        ft = psi(a[idx] + ts[:, None] * d[idx])
        improve = np.abs(ft) < best_f[idx]
        best_t[idx] = np.where(improve, ts, best_t[idx])
        best_f[idx] = np.where(improve, np.abs(ft), best_f[idx])

        same_lo = np.sign(ft) == np.sign(fl)
        new_lo = np.where(same_lo, ts, l)
        new_hi = np.where(same_lo, h, ts)
        new_flo = np.where(same_lo, ft, fl)
        new_fhi = np.where(same_lo, fh, ft)
        s = side[idx]
        # Illinois: halve the stale end-point value when one side repeats
        new_fhi = np.where(same_lo & (s == 1), 0.5 * new_fhi, new_fhi)
        new_flo = np.where(~same_lo & (s == -1), 0.5 * new_flo, new_flo)
        side[idx] = np.where(same_lo, 1, -1)
        lo[idx], hi[idx], flo[idx], fhi[idx] = new_lo, new_hi, new_flo, new_fhi

        done = (ft == 0.0) | (new_hi - new_lo <= 1e-14) | (np.abs(ft) <= 1e-14 * scale[idx])
        active[idx[done]] = False
    return best_t


def edge_intersection(geom: LevelSetGeometry, a, b, eps: Optional[float] = None):
    """Parameter ``t`` of the boundary crossing on segment ``a -> b``, or None.

    The cut is collapsed onto the nearest end point when it lies within
    ``eps`` (defaults to the geometry's snap tolerance) of it.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not np.linalg.norm(b - a) > 0.0:
        raise ValueError("degenerate edge")
    eps = geom.snap_tolerance_eps if eps is None else eps
    t = edge_roots(geom.psi, a[None], b[None], eps=eps)[0]
    return None if np.isnan(t) else float(t)


# ---------------------------------------------------------------- shapes

def _sphere(center, radius) -> tuple[Field, Field]:
    c = np.asarray(center, dtype=float)

    def psi(x):
        return np.linalg.norm(x - c, axis=-1) - radius

    def grad(x):
        r = x - c
        return r / np.linalg.norm(r, axis=-1, keepdims=True)

    return psi, grad


def popcorn_centers() -> np.ndarray:
    """The twelve bump centres of the popcorn flake in its reference frame."""
    r0 = POPCORN_R0
    pts = []
    for k in range(5):
        ang = 2.0 * k * np.pi / 5.0
        pts.append(r0 / np.sqrt(5.0) * np.array([2 * np.cos(ang), 2 * np.sin(ang), 1.0]))
    for k in range(5, 10):
        ang = (2.0 * (k - 5) - 1.0) * np.pi / 5.0
        pts.append(r0 / np.sqrt(5.0) * np.array([2 * np.cos(ang), 2 * np.sin(ang), -1.0]))
    pts.append(np.array([0.0, 0.0, r0]))
    pts.append(np.array([0.0, 0.0, -r0]))
    return np.array(pts)


def _popcorn(center, frame) -> tuple[Field, Field]:
    c = np.asarray(center, dtype=float)
    bumps = popcorn_centers()
    amp, sig2 = POPCORN_AMPLITUDE, POPCORN_SIGMA ** 2

    def psi(x):
        y = (x - c) / frame
        val = np.linalg.norm(y, axis=-1) - POPCORN_R0
        for xk in bumps:
            val = val - amp * np.exp(-np.sum((y - xk) ** 2, axis=-1) / sig2)
        return frame * val

    def grad(x):
        y = (x - c) / frame
        r = np.linalg.norm(y, axis=-1, keepdims=True)
        g = y / np.where(r > 0, r, 1.0)
        for xk in bumps:
            dy = y - xk
            e = np.exp(-np.sum(dy ** 2, axis=-1, keepdims=True) / sig2)
            g = g + amp * e * 2.0 * dy / sig2
        return g

    return psi, grad


def diagonal_center(l: float, dim: int) -> np.ndarray:
    """Point at distance ``l`` from the origin vertex along the box diagonal."""
    return np.full(dim, l / np.sqrt(dim))


def builtin_shapes(name: str, scale: float = 1.0, l: Optional[float] = None,
                   center=None, radius: Optional[float] = None,
                   eps: Optional[float] = None, dim: Optional[int] = None) -> LevelSetGeometry:
    """Benchmark geometries inside the unit box.

    ``scale`` shrinks the body about its centre; ``l`` places the centre on
    the main diagonal at distance ``l`` from the origin. ``radius`` overrides
    the circle/sphere radius directly.
    """
    if name == "circle":
        d = 2
    elif name in ("sphere", "popcorn"):
        d = 3
    else:
        raise ValueError(f"unknown shape {name!r}")
    if dim is not None and dim != d:
        raise ValueError(f"shape {name!r} is {d}D")
    if center is None:
        center = diagonal_center(l, d) if l is not None else np.full(d, 0.5)
    center = np.asarray(center, dtype=float)
    if eps is None:
        eps = DEFAULT_EPS[d]

    if name == "popcorn":
        frame = POPCORN_FRAME * scale
        psi, grad = _popcorn(center, frame)
        extent = 0.9 * frame
    else:
        r = BENCHMARK_RADIUS * scale if radius is None else radius
        psi, grad = _sphere(center, r)
        extent = r
    return LevelSetGeometry(psi=psi, dim=d, grad_psi=grad, snap_tolerance_eps=eps,
                            name=name, center=tuple(center), extent=extent)


def halfspace(normal, offset: float, dim: int, eps: float = 0.0) -> LevelSetGeometry:
    """psi(x) = n.x - offset (not normalised)."""
    n = np.asarray(normal, dtype=float)

    def psi(x):
        return x @ n - offset

    def grad(x):
        return np.broadcast_to(n, np.shape(x)).copy()

    return LevelSetGeometry(psi=psi, dim=dim, grad_psi=grad, snap_tolerance_eps=eps,
                            name="halfspace")


# ---------------------------------------------------------- manufactured

MANUFACTURED_ORIGIN = (2.3, 0.0, 0.0)
MANUFACTURED_FREQ = 4.0 * np.pi


def manufactured(dim: int) -> ManufacturedSolution:
    """u = sin(4 pi |x - (2.3, 0, 0)|), with z = 0 in 2D."""
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    x0 = np.asarray(MANUFACTURED_ORIGIN[:dim])
    k = MANUFACTURED_FREQ

    def rho(x):
        return np.linalg.norm(np.asarray(x, dtype=float) - x0, axis=-1)

    def u(x):
        return np.sin(k * rho(x))

    def grad_u(x):
        x = np.asarray(x, dtype=float)
        r = rho(x)[..., None]
        return k * np.cos(k * r) * (x - x0) / r

    def f(x):
        r = rho(x)
        # radial Laplacian in dim dimensions
        lap = -k * k * np.sin(k * r) + (dim - 1) / r * k * np.cos(k * r)
        return -lap

    return ManufacturedSolution(u=u, grad_u=grad_u, f=f, dim=dim)


def affine_solution(coeffs, const: float = 0.0) -> ManufacturedSolution:
    """u = c.x + const; harmonic, so f = 0."""
    c = np.asarray(coeffs, dtype=float)

    def u(x):
        return np.asarray(x, dtype=float) @ c + const

    def grad_u(x):
        return np.broadcast_to(c, np.shape(x)).astype(float)

    def f(x):
        return np.zeros(np.shape(x)[:-1])

    return ManufacturedSolution(u=u, grad_u=grad_u, f=f, dim=len(c))

"""Quadrature on interior cells and on the physical part of cut cells.

Cut cells are split into ``2**(r*dim)`` sub-cells, each sub-cell into Kuhn
simplices, and every simplex is clipped against ``psi < 0`` using the exact
roots of psi on its edges. The resulting piecewise-linear interface is
watertight across cells because the Kuhn splitting is conforming.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from typing import Optional

import numpy as np
from scipy.special import roots_jacobi

from .geometry import LevelSetGeometry, edge_roots
from .mesh import CUT, INTERIOR, BackgroundMesh, corner_offsets


@dataclass
class CutQuadrature:
    """Quadrature for a single cell.

    ``bulk`` holds points/weights on K n Omega, ``surface`` points, weights
    and outward unit normals on the boundary pieces inside K.
    """
    bulk_points: np.ndarray
    bulk_weights: np.ndarray
    surface_points: np.ndarray
    surface_weights: np.ndarray
    surface_normals: np.ndarray
    subdivision_depth: int = 0


# ------------------------------------------------------------- ref rules

@lru_cache(maxsize=None)
def gauss_legendre_01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def tensor_gauss(dim: int, n: int):
    """Tensor Gauss rule on [0,1]^dim with n points per axis (x fastest)."""
    x, w = gauss_legendre_01(n)
    pts = np.array([p[::-1] for p in itertools.product(x, repeat=dim)])
    wts = np.array([np.prod(p) for p in itertools.product(w, repeat=dim)])
    return pts, wts


@lru_cache(maxsize=None)
def _jacobi_01(n: int, alpha: int):
    # weight (1 - u)^alpha on [0, 1]
    x, w = roots_jacobi(n, alpha, 0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int):
    """Collapsed Gauss-Jacobi rule on the unit reference simplex.

    Exact for polynomials of total degree ``degree``; weights sum to 1/dim!.
    """
    m = max(1, (degree + 2) // 2)
    if dim == 1:
        x, w = gauss_legendre_01(m)
        return x[:, None], w
    if dim == 2:
        u, wu = _jacobi_01(m, 1)
        v, wv = gauss_legendre_01(m)
        U, V = np.meshgrid(u, v, indexing="ij")
        W = np.outer(wu, wv)
        pts = np.stack([U.ravel(), ((1 - U) * V).ravel()], axis=1)
        return pts, W.ravel()
    if dim == 3:
        u, wu = _jacobi_01(m, 2)
        v, wv = _jacobi_01(m, 1)
        s, ws = gauss_legendre_01(m)
        U, V, S = np.meshgrid(u, v, s, indexing="ij")
        W = wu[:, None, None] * wv[None, :, None] * ws[None, None, :]
        x1 = U
        x2 = (1 - U) * V
        x3 = (1 - U) * (1 - V) * S
        pts = np.stack([x1.ravel(), x2.ravel(), x3.ravel()], axis=1)
        return pts, W.ravel()
    raise ValueError("dim must be 1, 2 or 3")


@lru_cache(maxsize=None)
def kuhn_simplices(dim: int) -> np.ndarray:
    """Local corner indices of the dim! Kuhn simplices of the unit cube."""
    out = []
    for perm in itertools.permutations(range(dim)):
        c = 0
        simplex = [c]
        for a in perm:
            c |= 1 << a
            simplex.append(c)
        out.append(simplex)
    return np.array(out, dtype=np.int64)


def default_degree(q: int, dim: int) -> int:
    """Simplex rule degree integrating all Nitsche terms of affine data exactly."""
    return max(2 * q, dim * q + 1)


def default_subdivision(q: int) -> int:
    return 0 if q == 1 else 2


# ------------------------------------------------------------- clipping
# Templates in terms of sorted vertices (inside first). Labels: ("v", i) for
# a simplex vertex, ("p", i, j) for the cut on edge i (inside) -> j (outside).

def _v(i):
    return ("v", i)


def _p(i, j):
    return ("p", i, j)


_TEMPLATES = {
    (2, 1): ([(_v(0), _p(0, 1), _p(0, 2))], [(_p(0, 1), _p(0, 2))]),
    (2, 2): ([(_v(0), _v(1), _p(1, 2)), (_v(0), _p(1, 2), _p(0, 2))],
             [(_p(0, 2), _p(1, 2))]),
    (3, 1): ([(_v(0), _p(0, 1), _p(0, 2), _p(0, 3))],
             [(_p(0, 1), _p(0, 2), _p(0, 3))]),
    (3, 2): ([(_v(0), _p(0, 2), _p(0, 3), _p(1, 3)),
              (_v(0), _p(0, 2), _p(1, 2), _p(1, 3)),
              (_v(0), _v(1), _p(1, 2), _p(1, 3))],
             [(_p(0, 2), _p(0, 3), _p(1, 3)), (_p(0, 2), _p(1, 2), _p(1, 3))]),
    (3, 3): ([(_v(0), _v(1), _v(2), _p(2, 3)),
              (_v(0), _v(1), _p(1, 3), _p(2, 3)),
              (_v(0), _p(0, 3), _p(1, 3), _p(2, 3))],
             [(_p(0, 3), _p(1, 3), _p(2, 3))]),
}


def clip_simplices(psi, verts: np.ndarray, vals: np.ndarray, eps: float = 0.0):
    """Clip simplices against ``psi < 0``.

    Parameters
    ----------
    verts : (S, d+1, d) simplex vertex coordinates
    vals : (S, d+1) psi at the vertices (possibly snapped)

    Returns
    -------
    bulk : (Sb, d+1, d) simplices covering the inside part
    bulk_src : (Sb,) index of the originating simplex
    facets : (Sf, d, d) boundary facets
    normals : (Sf, d) outward unit normals
    facet_src : (Sf,)
    """
    S, nv, d = verts.shape
    inside = vals < 0.0
    k = inside.sum(axis=1)
    bulk, bulk_src, facets, normals, facet_src = [], [], [], [], []

    full = np.flatnonzero(k == nv)
    bulk.append(verts[full])
    bulk_src.append(full)

    for kk in range(1, nv):
        sel = np.flatnonzero(k == kk)
        if sel.size == 0:
            continue
        order = np.argsort(~inside[sel], axis=1, kind="stable")
        V = np.take_along_axis(verts[sel], order[:, :, None], axis=1)
        F = np.take_along_axis(vals[sel], order, axis=1)
        points = {}
        for i in range(kk):
            for j in range(kk, nv):
                t = edge_roots(psi, V[:, i], V[:, j], F[:, i], F[:, j], eps=eps)
                points[("p", i, j)] = V[:, i] + t[:, None] * (V[:, j] - V[:, i])
        for i in range(nv):
            points[("v", i)] = V[:, i]
        btmpl, ftmpl = _TEMPLATES[(d, kk)]
        for tmpl in btmpl:
            bulk.append(np.stack([points[lab] for lab in tmpl], axis=1))
            bulk_src.append(sel)
        apex = V[:, 0]
        for tmpl in ftmpl:
            P = np.stack([points[lab] for lab in tmpl], axis=1)
            n = _facet_normal(P)
            cen = P.mean(axis=1)
            flip = np.sum(n * (cen - apex), axis=1) < 0.0
            n[flip] *= -1.0
            facets.append(P)
            normals.append(n)
            facet_src.append(sel)

    bulk = np.concatenate(bulk) if bulk else np.zeros((0, nv, d))
    bulk_src = np.concatenate(bulk_src).astype(np.int64)
    if facets:
        facets = np.concatenate(facets)
        normals = np.concatenate(normals)
        facet_src = np.concatenate(facet_src).astype(np.int64)
    else:
        facets = np.zeros((0, d, d))
        normals = np.zeros((0, d))
        facet_src = np.zeros(0, dtype=np.int64)
    return bulk, bulk_src, facets, normals, facet_src


def _facet_normal(P: np.ndarray) -> np.ndarray:
    d = P.shape[2]
    if d == 2:
        t = P[:, 1] - P[:, 0]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
    else:
        n = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.where(norm > 0, norm, 1.0)


def simplex_measure(S: np.ndarray) -> np.ndarray:
    """Measure of simplices (N, k+1, d) with k = d (volume) or d-1 (facet)."""
    J = S[:, 1:] - S[:, :1]
    k, d = J.shape[1], J.shape[2]
    if k == d:
        return np.abs(np.linalg.det(J)) / factorial(d)
    if k == 1:
        return np.linalg.norm(J[:, 0], axis=1)
    if k == 2 and d == 3:
        return 0.5 * np.linalg.norm(np.cross(J[:, 0], J[:, 1]), axis=1)
    raise ValueError("unsupported simplex shape")


def map_simplex_rule(S: np.ndarray, degree: int):
    """Physical points/weights of the reference rule on each simplex."""
    k = S.shape[1] - 1
    ref_pts, ref_w = simplex_rule(k, degree)
    J = S[:, 1:] - S[:, :1]
    pts = S[:, None, 0, :] + np.einsum("qk,skd->sqd", ref_pts, J)
    meas = simplex_measure(S) * factorial(k)
    wts = meas[:, None] * ref_w[None, :]
    return pts, wts


# ----------------------------------------------------------- cut rules

@dataclass
class QuadratureSet:
    """Cut-cell quadrature for a set of cut cells, stored flat.

    Entries are sorted by owner; ``*_offsets`` delimit each cell's range.
    """
    cells: np.ndarray
    bulk_points: np.ndarray
    bulk_weights: np.ndarray
    bulk_owner: np.ndarray
    bulk_offsets: np.ndarray
    surface_points: np.ndarray
    surface_weights: np.ndarray
    surface_normals: np.ndarray
    surface_owner: np.ndarray
    surface_offsets: np.ndarray
    simplices: np.ndarray
    simplex_owner: np.ndarray
    degree: int
    subdivision_depth: int
    dim: int

    def __post_init__(self):
        self._pos = {int(c): i for i, c in enumerate(self.cells)}

    def position(self, cell: int) -> int:
        return self._pos[int(cell)]

    def cell_rule(self, cell: int) -> CutQuadrature:
        i = self.position(cell)
        b = slice(self.bulk_offsets[i], self.bulk_offsets[i + 1])
        s = slice(self.surface_offsets[i], self.surface_offsets[i + 1])
        return CutQuadrature(self.bulk_points[b], self.bulk_weights[b],
                             self.surface_points[s], self.surface_weights[s],
                             self.surface_normals[s], self.subdivision_depth)

    def cell_volumes(self) -> np.ndarray:
        return np.bincount(self.bulk_owner, weights=self.bulk_weights,
                           minlength=len(self.cells))

    def cell_surfaces(self) -> np.ndarray:
        return np.bincount(self.surface_owner, weights=self.surface_weights,
                           minlength=len(self.cells))

    def cell_volume(self, cell: int) -> float:
        return float(self.cell_volumes()[self.position(cell)])


def _subcell_values(mesh: BackgroundMesh, geom: LevelSetGeometry, cells: np.ndarray,
                    r: int):
    """Sub-lattice coordinates and psi for each cut cell, (C, (2^r+1)^d, ...)."""
    d = mesh.dim
    m = 2 ** r
    loc = np.array(list(itertools.product(range(m + 1), repeat=d)))[:, ::-1]
    idx = mesh.cell_index(cells)
    glob = idx[:, None, :] * m + loc[None, :, :]
    x = mesh.origin + glob * (mesh.h / m)
    vals = geom.psi(x)
    # corner sub-vertices carry the snapped mesh values
    corners = np.flatnonzero(np.all((loc == 0) | (loc == m), axis=1))
    corner_local = (loc[corners] // m) @ (1 << np.arange(d))
    verts = mesh.cell_vertices(cells)
    vals[:, corners] = mesh.corner_psi[verts[:, corner_local]]
    return x, vals, loc


def _subcell_simplices(d: int, r: int):
    """Sub-lattice indices of all Kuhn simplices of all sub-cells."""
    m = 2 ** r
    lat = (m + 1) ** np.arange(d)
    offs = corner_offsets(d)
    out = []
    for sub in itertools.product(range(m), repeat=d):
        base = np.array(sub[::-1])
        corner_ids = (base[None, :] + offs) @ lat
        out.append(corner_ids[kuhn_simplices(d)])
    return np.concatenate(out)


def build_cut_quadrature(mesh: BackgroundMesh, geom: LevelSetGeometry, q: int = 1,
                         subdiv: Optional[int] = None, degree: Optional[int] = None,
                         cells: Optional[np.ndarray] = None,
                         chunk: int = 4096) -> QuadratureSet:
    """Bulk and surface rules for the cut cells of a classified mesh."""
    d = mesh.dim
    r = default_subdivision(q) if subdiv is None else subdiv
    deg = default_degree(q, d) if degree is None else degree
    if cells is None:
        cells = mesh.cut_cells
    cells = np.asarray(cells, dtype=np.int64)
    sub = _subcell_simplices(d, r)
    eps = geom.snap_tolerance_eps

    parts = {k: [] for k in ("bp", "bw", "bo", "sp", "sw", "sn", "so", "simp", "simpo")}
    for start in range(0, len(cells), chunk):
        cc = cells[start:start + chunk]
        x, vals, _ = _subcell_values(mesh, geom, cc, r)
        nsimp = sub.shape[0]
        V = x[:, sub].reshape(-1, d + 1, d)
        F = vals[:, sub].reshape(-1, d + 1)
        owner = np.repeat(np.arange(start, start + len(cc)), nsimp)
        bulk, bsrc, facets, normals, fsrc = clip_simplices(geom.psi, V, F, eps=eps)
        bmeas = simplex_measure(bulk) if len(bulk) else np.zeros(0)
        keep = bmeas > 0.0
        bulk, bsrc = bulk[keep], bsrc[keep]
        fmeas = simplex_measure(facets) if len(facets) else np.zeros(0)
        keepf = fmeas > 0.0
        facets, normals, fsrc = facets[keepf], normals[keepf], fsrc[keepf]

        pts, wts = map_simplex_rule(bulk, deg)
        parts["bp"].append(pts.reshape(-1, d))
        parts["bw"].append(wts.ravel())
        parts["bo"].append(np.repeat(owner[bsrc], pts.shape[1]))
        parts["simp"].append(bulk)
        parts["simpo"].append(owner[bsrc])
        spts, swts = map_simplex_rule(facets, deg)
        parts["sp"].append(spts.reshape(-1, d))
        parts["sw"].append(swts.ravel())
        parts["sn"].append(np.repeat(normals, spts.shape[1], axis=0))
        parts["so"].append(np.repeat(owner[fsrc], spts.shape[1]))

    def cat(key, shape):
        return np.concatenate(parts[key]) if parts[key] else np.zeros(shape)

    bo = cat("bo", (0,)).astype(np.int64)
    so = cat("so", (0,)).astype(np.int64)
    bord = np.argsort(bo, kind="stable")
    sord = np.argsort(so, kind="stable")
    simpo = cat("simpo", (0,)).astype(np.int64)
    tord = np.argsort(simpo, kind="stable")
    n = len(cells)
    return QuadratureSet(
        cells=cells,
        bulk_points=cat("bp", (0, d))[bord], bulk_weights=cat("bw", (0,))[bord],
        bulk_owner=bo[bord], bulk_offsets=_offsets(bo, n),
        surface_points=cat("sp", (0, d))[sord], surface_weights=cat("sw", (0,))[sord],
        surface_normals=cat("sn", (0, d))[sord], surface_owner=so[sord],
        surface_offsets=_offsets(so, n),
        simplices=cat("simp", (0, d + 1, d))[tord], simplex_owner=simpo[tord],
        degree=deg, subdivision_depth=r, dim=d)


def _offsets(owner: np.ndarray, n: int) -> np.ndarray:
    counts = np.bincount(owner, minlength=n)
    return np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)


def interior_rule(mesh: BackgroundMesh, cell: int, q: int,
                  npts: Optional[int] = None) -> CutQuadrature:
    """Tensor Gauss rule with (q+1)^d points on a full cell."""
    n = q + 1 if npts is None else npts
    ref, w = tensor_gauss(mesh.dim, n)
    x0 = mesh.cell_origin(np.array([cell]))[0]
    d = mesh.dim
    return CutQuadrature(x0 + ref * mesh.h, w * mesh.cell_volume,
                         np.zeros((0, d)), np.zeros(0), np.zeros((0, d)), 0)


def cut_rule(mesh: BackgroundMesh, geom: LevelSetGeometry, cell: int, q: int = 1,
             r: Optional[int] = None, degree: Optional[int] = None) -> CutQuadrature:
    if mesh.cell_class[cell] != CUT:
        raise ValueError(f"cell {cell} is not cut")
    qs = build_cut_quadrature(mesh, geom, q=q, subdiv=r, degree=degree,
                              cells=np.array([cell]))
    return qs.cell_rule(cell)


def domain_measures(mesh: BackgroundMesh, geom: LevelSetGeometry, q: int = 1,
                    r: Optional[int] = None, quad: Optional[QuadratureSet] = None):
    """Approximate |Omega| and |Gamma| from the quadrature weights."""
    if quad is None:
        quad = build_cut_quadrature(mesh, geom, q=q, subdiv=r)
    n_in = int(np.count_nonzero(mesh.cell_class == INTERIOR))
    vol = n_in * mesh.cell_volume + float(np.sum(quad.bulk_weights))
    return vol, float(np.sum(quad.surface_weights))


def write_point_cloud_csv(quad: QuadratureSet, path) -> None:
    """Dump bulk and surface quadrature points for visualisation."""
    import csv
    d = quad.dim
    axes = ["x", "y", "z"][:d]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "cell"] + axes + ["weight"] + [f"n{a}" for a in axes])
        for p, wt, o in zip(quad.bulk_points, quad.bulk_weights, quad.bulk_owner):
            w.writerow(["bulk", int(quad.cells[o])] + list(p) + [wt] + [""] * d)
        for p, wt, n, o in zip(quad.surface_points, quad.surface_weights,
                               quad.surface_normals, quad.surface_owner):
            w.writerow(["surface", int(quad.cells[o])] + list(p) + [wt] + list(n))

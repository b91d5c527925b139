"""Cell aggregation: every cut cell is attached to exactly one interior root.

The sweep is synchronous: in each iteration an untouched cut cell looks only
at cells touched in previous iterations, so the result does not depend on
the order in which cells are visited.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .mesh import CUT, EXTERIOR, INTERIOR, BackgroundMesh, candidate_cells, facet_cut_mask, with_classes

log = logging.getLogger(__name__)


@dataclass
class AggregateMap:
    root_of: np.ndarray          # per cell; -1 for inactive cells
    iterations_used: int
    discarded_cells: np.ndarray
    mesh: BackgroundMesh = field(repr=False)  # classification after discards

    @property
    def roots(self) -> np.ndarray:
        return np.unique(self.root_of[self.root_of >= 0])

    def members_of(self, root: int) -> np.ndarray:
        return np.flatnonzero(self.root_of == root)

    def sizes(self) -> np.ndarray:
        """Member count of the aggregate of every cell (0 for inactive)."""
        counts = np.bincount(self.root_of[self.root_of >= 0], minlength=len(self.root_of))
        out = np.zeros(len(self.root_of), dtype=np.int64)
        act = self.root_of >= 0
        out[act] = counts[self.root_of[act]]
        return out


_BIG = np.iinfo(np.int64).max


def _lexmin(primary: np.ndarray, secondary: np.ndarray) -> np.ndarray:
    """Row-wise argmin of ``(primary, secondary)`` in lexicographic order."""
    tie = primary == primary.min(axis=1, keepdims=True)
    return np.argmin(np.where(tie, secondary, _BIG), axis=1)


def _neighbor_table(mesh: BackgroundMesh):
    """Per cell and facet direction: neighbour id (-1 at the box) and cut flag."""
    n = mesh.n_cells
    idx = mesh.cell_index(np.arange(n))
    strides = mesh.cell_strides()
    nbrs, cut = [], []
    for a in range(mesh.dim):
        for side in (-1, 1):
            nb = np.arange(n) + side * strides[a]
            ok = (idx[:, a] + side >= 0) & (idx[:, a] + side < mesh.cells_per_axis[a])
            nb = np.where(ok, nb, -1)
            lower = np.where(side < 0, nb, np.arange(n))
            flag = np.zeros(n, dtype=bool)
            flag[ok] = facet_cut_mask(mesh, a, lower[ok])
            nbrs.append(nb)
            cut.append(flag)
    return np.stack(nbrs, axis=1), np.stack(cut, axis=1)


def _sweep(mesh, root_of, touched, nbrs, cut, centers, pending):
    """Run synchronous aggregation iterations; returns iteration count."""
    iterations = 0
    while True:
        cand_cells = np.flatnonzero(pending & ~touched)
        if cand_cells.size == 0:
            break
        nb = nbrs[cand_cells]
        ok = (nb >= 0) & cut[cand_cells]
        ok &= np.where(nb >= 0, touched[np.maximum(nb, 0)], False)
        has = ok.any(axis=1)
        if not has.any():
            break
        cand_cells, nb, ok = cand_cells[has], nb[has], ok[has]
        nb_root = np.where(ok, root_of[np.maximum(nb, 0)], -1)
        dist = np.linalg.norm(centers[np.maximum(nb_root, 0)] - centers[cand_cells][:, None, :], axis=2)
        dist = np.where(ok, dist, np.inf)
        # lexicographic (distance, neighbour id); distances are rounded so
        # that exact ties are not split by floating-point noise
        key_d = np.round(dist / mesh.h_max, 9)
        best = nb[np.arange(len(cand_cells)), _lexmin(key_d, np.where(ok, nb, _BIG))]
        root_of[cand_cells] = root_of[best]
        touched[cand_cells] = True
        iterations += 1
    return iterations


def aggregate_cells(mesh: BackgroundMesh, geom=None, eta0: float = 1.0,
                    eta_values=None) -> AggregateMap:
    """Aggregate cut cells onto interior root cells.

    With ``eta0 < 1`` cut cells whose volume fraction exceeds ``eta0`` seed
    their own provisional aggregates, which are then attached to the nearest
    interior-rooted aggregate (experimental).
    """
    if not 0.0 < eta0 <= 1.0:
        raise ValueError("eta0 must lie in (0, 1]")
    n = mesh.n_cells
    cls = mesh.cell_class
    root_of = np.full(n, -1, dtype=np.int64)
    touched = cls == INTERIOR
    root_of[touched] = np.flatnonzero(touched)
    pending = cls == CUT
    centers = mesh.cell_centers()
    nbrs, cut = _neighbor_table(mesh)

    seeds = np.zeros(n, dtype=bool)
    if eta0 < 1.0:
        if eta_values is None:
            from .quadrature import build_cut_quadrature
            quad = build_cut_quadrature(mesh, geom, q=1, subdiv=0)
            eta_values = np.zeros(n)
            eta_values[quad.cells] = quad.cell_volumes() / mesh.cell_volume
        seeds = pending & (np.asarray(eta_values) > eta0)
        touched = touched | seeds
        root_of[seeds] = np.flatnonzero(seeds)

    iterations = _sweep(mesh, root_of, touched, nbrs, cut, centers, pending)
    if seeds.any():
        _attach_seeded(mesh, root_of, nbrs, cut, centers, cls)

    orphan = (cls == CUT) & ((root_of < 0) | (cls[np.maximum(root_of, 0)] != INTERIOR))
    discarded = np.flatnonzero(orphan)
    if discarded.size:
        log.warning("discarding %d unreachable cut cells", discarded.size)
        root_of[discarded] = -1
        new_cls = cls.copy()
        new_cls[discarded] = EXTERIOR
        mesh = with_classes(mesh, new_cls)
    return AggregateMap(root_of=root_of, iterations_used=iterations,
                        discarded_cells=discarded, mesh=mesh)


def _attach_seeded(mesh, root_of, nbrs, cut, centers, cls):
    while True:
        seeded_roots = np.unique(root_of[(root_of >= 0)])
        seeded_roots = seeded_roots[cls[seeded_roots] != INTERIOR]
        if seeded_roots.size == 0:
            return
        changed = False
        for r in seeded_roots:
            members = np.flatnonzero(root_of == r)
            nb = nbrs[members]
            ok = (nb >= 0) & cut[members]
            targets = np.unique(root_of[nb[ok]])
            targets = targets[(targets >= 0) & (cls[np.maximum(targets, 0)] == INTERIOR)]
            if targets.size == 0:
                continue
            dist = np.round(np.linalg.norm(centers[targets] - centers[r], axis=1) / mesh.h_max, 9)
            best = targets[np.lexsort((targets, dist))[0]]
            root_of[members] = best
            changed = True
        if not changed:
            return


def max_aggregate_size(amap: AggregateMap, mesh: BackgroundMesh = None,
                       measure: str = "diagonal") -> float:
    """Largest aggregate, as bounding-box diagonal (or largest box side)."""
    mesh = amap.mesh if mesh is None else mesh
    act = np.flatnonzero(amap.root_of >= 0)
    if act.size == 0:
        return 0.0
    lo = mesh.cell_origin(act)
    hi = lo + mesh.h
    roots = amap.root_of[act]
    d = mesh.dim
    bmin = np.full((mesh.n_cells, d), np.inf)
    bmax = np.full((mesh.n_cells, d), -np.inf)
    for a in range(d):
        np.minimum.at(bmin[:, a], roots, lo[:, a])
        np.maximum.at(bmax[:, a], roots, hi[:, a])
    r = np.unique(roots)
    ext = bmax[r] - bmin[r]
    if measure == "diagonal":
        return float(np.max(np.linalg.norm(ext, axis=1)))
    if measure == "extent":
        return float(np.max(ext))
    raise ValueError(f"unknown measure {measure!r}")


def node_to_root(amap: AggregateMap, mesh: BackgroundMesh, space) -> np.ndarray:
    """Root cell K(b) of every outer node, aligned with ``space.outer_dofs``.

    The owner cell of a node is, among the active cells containing its owner
    VEF, the one in the smallest aggregate (ties: smaller root id).
    """
    outer = space.outer_dofs
    if outer.size == 0:
        return np.zeros(0, dtype=np.int64)
    lat = space.dof_lattice_index(outer)
    cand = candidate_cells(mesh, space.q, lat)
    sizes = amap.sizes()
    valid = cand >= 0
    c = np.maximum(cand, 0)
    valid &= amap.root_of[c] >= 0
    assert np.all(valid.any(axis=1)), "outer node without an active incident cell"
    size_key = np.where(valid, sizes[c], _BIG)
    root_key = np.where(valid, amap.root_of[c], _BIG)
    return root_key[np.arange(len(outer)), _lexmin(size_key, root_key)]


def write_aggregate_csv(amap: AggregateMap, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "root_id"])
        for c in np.flatnonzero(amap.root_of >= 0):
            w.writerow([int(c), int(amap.root_of[c])])

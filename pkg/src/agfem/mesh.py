"""Cartesian background mesh, cell classification and facet/VEF topology.

Cells and vertices are numbered lexicographically with the first axis running
fastest. A cell's corners are ordered the same way: bit ``a`` of the local
corner index is the offset along axis ``a``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geometry import LevelSetGeometry, edge_roots

INTERIOR, CUT, EXTERIOR = 0, 1, 2
CLASS_NAMES = {INTERIOR: "interior", CUT: "cut", EXTERIOR: "exterior"}


@dataclass(frozen=True)
class BackgroundMesh:
    dim: int
    cells_per_axis: tuple
    origin: np.ndarray
    h: np.ndarray
    cell_class: Optional[np.ndarray] = field(default=None, repr=False)
    corner_psi: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells_per_axis))

    @property
    def vertices_per_axis(self) -> tuple:
        return tuple(n + 1 for n in self.cells_per_axis)

    @property
    def n_vertices(self) -> int:
        return int(np.prod(self.vertices_per_axis))

    @property
    def h_max(self) -> float:
        return float(np.max(self.h))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def classified(self) -> bool:
        return self.cell_class is not None

    def cell_strides(self) -> np.ndarray:
        return _strides(self.cells_per_axis)

    def vertex_strides(self) -> np.ndarray:
        return _strides(self.vertices_per_axis)

    def cell_index(self, cells) -> np.ndarray:
        """Multi-index (N, dim) of cell ids."""
        return _unravel(np.asarray(cells), self.cells_per_axis)

    def cell_id(self, multi) -> np.ndarray:
        return np.asarray(multi) @ self.cell_strides()

    def vertex_index(self, verts) -> np.ndarray:
        return _unravel(np.asarray(verts), self.vertices_per_axis)

    def vertex_coords(self, verts=None) -> np.ndarray:
        if verts is None:
            verts = np.arange(self.n_vertices)
        return self.origin + self.vertex_index(verts) * self.h

    def corner_offsets(self) -> np.ndarray:
        """Local corner offsets, shape (2**dim, dim)."""
        return corner_offsets(self.dim)

    def cell_vertices(self, cells) -> np.ndarray:
        """Vertex ids of the cell corners, shape (N, 2**dim)."""
        base = self.cell_index(np.atleast_1d(cells)) @ self.vertex_strides()
        return base[:, None] + self.corner_offsets() @ self.vertex_strides()

    def cell_origin(self, cells) -> np.ndarray:
        return self.origin + self.cell_index(np.atleast_1d(cells)) * self.h

    def cell_centers(self, cells=None) -> np.ndarray:
        if cells is None:
            cells = np.arange(self.n_cells)
        return self.cell_origin(cells) + 0.5 * self.h

    def cells_of_class(self, cls: int) -> np.ndarray:
        self._require_classified()
        return np.flatnonzero(self.cell_class == cls)

    @property
    def interior_cells(self) -> np.ndarray:
        return self.cells_of_class(INTERIOR)

    @property
    def cut_cells(self) -> np.ndarray:
        return self.cells_of_class(CUT)

    @property
    def active_cells(self) -> np.ndarray:
        self._require_classified()
        return np.flatnonzero(self.cell_class != EXTERIOR)

    def _require_classified(self):
        if self.cell_class is None:
            raise ValueError("mesh is not classified")


def _strides(shape) -> np.ndarray:
    s = np.ones(len(shape), dtype=np.int64)
    for a in range(1, len(shape)):
        s[a] = s[a - 1] * shape[a - 1]
    return s


def _unravel(ids: np.ndarray, shape) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    out = np.empty(ids.shape + (len(shape),), dtype=np.int64)
    rem = ids.copy()
    for a, n in enumerate(shape):
        out[..., a] = rem % n
        rem //= n
    return out


def corner_offsets(dim: int) -> np.ndarray:
    return np.array([[(c >> a) & 1 for a in range(dim)] for c in range(2 ** dim)],
                    dtype=np.int64)


def build_mesh(box, cells_per_axis) -> BackgroundMesh:
    """Uniform Cartesian mesh of ``box = (lower, upper)``."""
    lower, upper = (np.asarray(b, dtype=float) for b in box)
    dim = lower.size
    n = np.broadcast_to(np.asarray(cells_per_axis), (dim,)).astype(int)
    if np.any(n < 1):
        raise ValueError("cells_per_axis must be >= 1 on every axis")
    if np.any(upper <= lower):
        raise ValueError("empty box")
    h = (upper - lower) / n
    return BackgroundMesh(dim=dim, cells_per_axis=tuple(int(v) for v in n),
                          origin=lower, h=h)


def unit_box_mesh(dim: int, n: int) -> BackgroundMesh:
    return build_mesh((np.zeros(dim), np.ones(dim)), n)


# --------------------------------------------------------------- classify

def snap_vertex_values(mesh: BackgroundMesh, geom: LevelSetGeometry,
                       psi: Optional[np.ndarray] = None) -> np.ndarray:
    """Vertex psi values with near-vertex edge cuts collapsed.

    A cut closer than ``eps * h`` to a vertex moves the boundary onto that
    vertex: its value becomes exactly zero.
    """
    if psi is None:
        psi = geom.psi(mesh.vertex_coords())
    psi = np.array(psi, dtype=float)
    eps = geom.snap_tolerance_eps
    if eps <= 0.0:
        return psi
    vidx = mesh.vertex_index(np.arange(mesh.n_vertices))
    vs = mesh.vertex_strides()
    zero = np.zeros(psi.shape, dtype=bool)
    for a in range(mesh.dim):
        va = np.flatnonzero(vidx[:, a] < mesh.cells_per_axis[a])
        vb = va + vs[a]
        fa, fb = psi[va], psi[vb]
        sel = fa * fb < 0.0
        va, vb, fa, fb = va[sel], vb[sel], fa[sel], fb[sel]
        if va.size == 0:
            continue
        xa, xb = mesh.vertex_coords(va), mesh.vertex_coords(vb)
        t = edge_roots(geom.psi, xa, xb, fa, fb)
        zero[va[t < eps]] = True
        zero[vb[t > 1.0 - eps]] = True
    psi[zero] = 0.0
    return psi


def classify_cells(mesh: BackgroundMesh, geom: LevelSetGeometry) -> BackgroundMesh:
    """Label cells interior / cut / exterior from snapped corner values.

    Zero corner values lie on the boundary: a cell is interior when every
    corner is strictly negative, exterior when none is, and cut otherwise.
    """
    if geom.dim != mesh.dim:
        raise ValueError("geometry and mesh dimensions differ")
    psi = snap_vertex_values(mesh, geom)
    corners = psi[mesh.cell_vertices(np.arange(mesh.n_cells))]
    neg = corners < 0.0
    cls = np.full(mesh.n_cells, CUT, dtype=np.int8)
    cls[np.all(neg, axis=1)] = INTERIOR
    cls[~np.any(neg, axis=1)] = EXTERIOR
    return replace(mesh, cell_class=cls, corner_psi=psi)


def with_classes(mesh: BackgroundMesh, cell_class: np.ndarray) -> BackgroundMesh:
    return replace(mesh, cell_class=np.asarray(cell_class, dtype=np.int8))


# ----------------------------------------------------------------- facets

def facet_neighbors(mesh: BackgroundMesh, cell: int):
    """Neighbours across facets as ``(neighbor, (axis, lower_cell))`` pairs.

    A facet is identified by its normal axis and the cell on its lower side,
    so both incident cells name it identically.
    """
    idx = mesh.cell_index(np.array([cell]))[0]
    strides = mesh.cell_strides()
    out = []
    for a in range(mesh.dim):
        if idx[a] > 0:
            nb = int(cell - strides[a])
            out.append((nb, (a, nb)))
        if idx[a] < mesh.cells_per_axis[a] - 1:
            nb = int(cell + strides[a])
            out.append((nb, (a, int(cell))))
    return out


def facet_corner_vertices(mesh: BackgroundMesh, axis: int, lower_cells) -> np.ndarray:
    """Vertex ids of the facet between ``lower_cells`` and their +axis neighbour."""
    verts = mesh.cell_vertices(lower_cells)
    upper_side = mesh.corner_offsets()[:, axis] == 1
    return verts[:, upper_side]


def facet_cut_by_domain(mesh: BackgroundMesh, facet) -> bool:
    """True when the facet meets the (discrete) domain.

    With snapped corner values every edge sign change has a strictly negative
    end point, so the test reduces to a strictly negative facet corner.
    """
    axis, lower = facet
    return bool(facet_cut_mask(mesh, axis, np.array([lower]))[0])


def facet_cut_mask(mesh: BackgroundMesh, axis: int, lower_cells) -> np.ndarray:
    if mesh.corner_psi is None:
        raise ValueError("mesh is not classified")
    vals = mesh.corner_psi[facet_corner_vertices(mesh, axis, lower_cells)]
    return np.any(vals < 0.0, axis=1)


def eta(mesh: BackgroundMesh, geom, cell: int, quad=None) -> float:
    """Volume fraction |K n Omega| / |K| of an active cell."""
    if mesh.cell_class[cell] == INTERIOR:
        return 1.0
    if mesh.cell_class[cell] == EXTERIOR:
        return 0.0
    if quad is None:
        from .quadrature import build_cut_quadrature
        quad = build_cut_quadrature(mesh, geom, q=1, subdiv=0, cells=np.array([cell]))
    return float(quad.cell_volume(cell) / mesh.cell_volume)


# -------------------------------------------------------------------- VEF

@dataclass(frozen=True)
class VEFIndex:
    """A vertex/edge/face of the grid, identified by a lattice point in it.

    ``lattice`` uses the order-``q`` node lattice; ``dimension`` counts axes
    along which the entity extends.
    """
    dimension: int
    lattice: tuple
    incident_cells: tuple


def owner_vef(mesh: BackgroundMesh, q: int, lattice) -> VEFIndex:
    """Lowest-dimensional VEF containing the order-``q`` lattice point."""
    lattice = tuple(int(v) for v in lattice)
    choices = []
    dim_vef = 0
    for a, L in enumerate(lattice):
        if L % q == 0:
            c = L // q
            choices.append([k for k in (c - 1, c) if 0 <= k < mesh.cells_per_axis[a]])
        else:
            dim_vef += 1
            choices.append([L // q])
    cells = tuple(sorted(int(mesh.cell_id(np.array(m))) for m in itertools.product(*choices)))
    return VEFIndex(dimension=dim_vef, lattice=lattice, incident_cells=cells)


def candidate_cells(mesh: BackgroundMesh, q: int, lattice: np.ndarray) -> np.ndarray:
    """Cells whose closure contains each lattice point, shape (N, 2**dim).

    Missing slots (outside the grid or duplicated) hold -1.
    """
    lattice = np.atleast_2d(lattice)
    n = lattice.shape[0]
    out = np.full((n, 2 ** mesh.dim), -1, dtype=np.int64)
    offs = corner_offsets(mesh.dim)
    strides = mesh.cell_strides()
    on_plane = lattice % q == 0
    base = lattice // q
    for s, off in enumerate(offs):
        # offset bit 1 on a plane axis selects the cell below the plane
        idx = base - (off[None, :] * on_plane)
        dup = np.any((off[None, :] == 1) & ~on_plane, axis=1)
        ok = ~dup & np.all((idx >= 0) & (idx < np.asarray(mesh.cells_per_axis)), axis=1)
        out[ok, s] = idx[ok] @ strides
    return out

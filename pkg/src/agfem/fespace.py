"""Lagrangian Q_q spaces on the active/interior meshes and the aggregation
constraints that define the aggregated space.

Global nodes live on the order-``q`` lattice of the background grid. Active
numbering puts interior nodes first, then outer nodes, so interior
coefficient vectors embed as a prefix of active ones.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .mesh import EXTERIOR, INTERIOR, BackgroundMesh

FLAVORS = ("active", "interior", "aggregated")


# ------------------------------------------------------------ reference

def lagrange_1d(q: int, x: np.ndarray):
    """Equispaced Lagrange basis on [0,1]: values and derivatives, (N, q+1)."""
    x = np.asarray(x, dtype=float)
    nodes = np.linspace(0.0, 1.0, q + 1)
    n = x.shape[0]
    val = np.ones((n, q + 1))
    der = np.zeros((n, q + 1))
    for i in range(q + 1):
        others = [j for j in range(q + 1) if j != i]
        denom = np.prod([nodes[i] - nodes[j] for j in others])
        for j in others:
            val[:, i] *= x - nodes[j]
        for k in others:
            term = np.ones(n)
            for j in others:
                if j != k:
                    term *= x - nodes[j]
            der[:, i] += term
        val[:, i] /= denom
        der[:, i] /= denom
    return val, der


@lru_cache(maxsize=None)
def local_lattice(q: int, dim: int) -> np.ndarray:
    """Local node lattice offsets (n_loc, dim), first axis fastest."""
    return np.array([p[::-1] for p in itertools.product(range(q + 1), repeat=dim)],
                    dtype=np.int64)


def tensor_basis(q: int, xi: np.ndarray, grad: bool = True):
    """Q_q basis at reference points ``xi`` (N, d) of [0,1]^d.

    Evaluation outside [0,1]^d extrapolates the polynomials.
    Returns values (N, n_loc) and, if requested, gradients (N, n_loc, d).
    """
    xi = np.atleast_2d(xi)
    N, d = xi.shape
    lat = local_lattice(q, d)
    V, D = zip(*(lagrange_1d(q, xi[:, a]) for a in range(d)))
    vals = np.ones((N, len(lat)))
    for a in range(d):
        vals *= V[a][:, lat[:, a]]
    if not grad:
        return vals
    grads = np.ones((N, len(lat), d))
    for g in range(d):
        for a in range(d):
            grads[:, :, g] *= (D[a] if a == g else V[a])[:, lat[:, a]]
    return vals, grads


# ---------------------------------------------------------------- space

@dataclass
class FESpace:
    mesh: BackgroundMesh
    q: int
    flavor: str
    cells: np.ndarray           # background cell ids carried by the space
    cell_dofs: np.ndarray       # (n_cells, n_loc), active numbering
    dof_lattice: np.ndarray     # (n_act,) lattice ids
    n_in: int
    cell_pos: np.ndarray = field(repr=False, default=None)  # cell id -> row, -1 if absent

    @property
    def n_act(self) -> int:
        return len(self.dof_lattice)

    @property
    def n_out(self) -> int:
        return self.n_act - self.n_in

    @property
    def n_dofs(self) -> int:
        """Number of free coefficients of the space."""
        return self.n_act if self.flavor == "active" else self.n_in

    @property
    def n_loc(self) -> int:
        return (self.q + 1) ** self.mesh.dim

    @property
    def lattice_shape(self) -> tuple:
        return tuple(self.q * n + 1 for n in self.mesh.cells_per_axis)

    def dof_coords(self, dofs=None) -> np.ndarray:
        lat = self.dof_lattice if dofs is None else self.dof_lattice[dofs]
        from .mesh import _unravel
        idx = _unravel(lat, self.lattice_shape)
        return self.mesh.origin + idx * (self.mesh.h / self.q)

    def dof_lattice_index(self, dofs=None) -> np.ndarray:
        from .mesh import _unravel
        lat = self.dof_lattice if dofs is None else self.dof_lattice[dofs]
        return _unravel(lat, self.lattice_shape)

    def dofs_of(self, cells) -> np.ndarray:
        pos = self.cell_pos[np.asarray(cells)]
        if np.any(pos < 0):
            raise KeyError("cell not in space")
        return self.cell_dofs[pos]

    @property
    def outer_dofs(self) -> np.ndarray:
        return np.arange(self.n_in, self.n_act)

    def reference_coords(self, cells, x) -> np.ndarray:
        return (np.asarray(x) - self.mesh.cell_origin(cells)) / self.mesh.h


def cell_lattice_ids(mesh: BackgroundMesh, q: int, cells) -> np.ndarray:
    """Global lattice ids of the local nodes of ``cells``, (N, n_loc)."""
    shape = tuple(q * n + 1 for n in mesh.cells_per_axis)
    strides = np.ones(mesh.dim, dtype=np.int64)
    for a in range(1, mesh.dim):
        strides[a] = strides[a - 1] * shape[a - 1]
    base = (mesh.cell_index(np.asarray(cells)) * q) @ strides
    return base[:, None] + local_lattice(q, mesh.dim) @ strides


def build_space(mesh: BackgroundMesh, q: int, flavor: str = "active") -> FESpace:
    """Continuous Q_q space on the active (or interior) cells."""
    if flavor not in FLAVORS:
        raise ValueError(f"unknown flavor {flavor!r}")
    if q < 1:
        raise ValueError("order must be >= 1")
    interior = mesh.interior_cells
    active = mesh.active_cells
    if flavor != "active" and interior.size == 0:
        raise ValueError("no interior cells; refine mesh")
    lat_in = np.unique(cell_lattice_ids(mesh, q, interior)) if interior.size else np.zeros(0, np.int64)
    lat_act = np.unique(cell_lattice_ids(mesh, q, active))
    lat_out = np.setdiff1d(lat_act, lat_in, assume_unique=True)
    dof_lattice = np.concatenate([lat_in, lat_out])
    n_lat = int(np.prod([q * n + 1 for n in mesh.cells_per_axis]))
    lookup = np.full(n_lat, -1, dtype=np.int64)
    lookup[dof_lattice] = np.arange(len(dof_lattice))

    cells = interior if flavor == "interior" else active
    cell_dofs = lookup[cell_lattice_ids(mesh, q, cells)]
    if flavor == "interior":
        dof_lattice = lat_in
    cell_pos = np.full(mesh.n_cells, -1, dtype=np.int64)
    cell_pos[cells] = np.arange(len(cells))
    return FESpace(mesh=mesh, q=q, flavor=flavor, cells=cells, cell_dofs=cell_dofs,
                   dof_lattice=dof_lattice, n_in=len(lat_in), cell_pos=cell_pos)


# ---------------------------------------------------------- constraints

@dataclass
class ConstraintSet:
    """Rows of C: each outer node as a combination of its root cell's nodes.

    ``cols[k]``/``coefs[k]`` hold the interior dofs and coefficients of the
    row for active dof ``n_in + k``.
    """
    n_in: int
    n_act: int
    root_cell: np.ndarray   # (n_out,)
    cols: np.ndarray        # (n_out, n_loc)
    coefs: np.ndarray       # (n_out, n_loc)

    @property
    def n_out(self) -> int:
        return self.n_act - self.n_in

    @property
    def C(self) -> sp.csr_matrix:
        rows = np.repeat(np.arange(self.n_out), self.cols.shape[1])
        return sp.csr_matrix((self.coefs.ravel(), (rows, self.cols.ravel())),
                             shape=(self.n_out, self.n_in))

    @property
    def E(self) -> sp.csr_matrix:
        return sp.vstack([sp.identity(self.n_in, format="csr"), self.C], format="csr")

    def expand_local(self, dofs: np.ndarray):
        """Dense map from interior dofs to the active dofs ``dofs``.

        Returns ``(columns, T)`` with ``T[i, j]`` the coefficient of interior
        dof ``columns[j]`` in active dof ``dofs[i]``.
        """
        dofs = np.asarray(dofs)
        inner = dofs < self.n_in
        if np.all(inner):
            return dofs.copy(), np.eye(len(dofs))
        k = dofs[~inner] - self.n_in
        cand = np.concatenate([dofs[inner], self.cols[k].ravel()])
        columns = np.unique(cand)
        T = np.zeros((len(dofs), len(columns)))
        pos = np.searchsorted(columns, dofs[inner])
        T[np.flatnonzero(inner), pos] = 1.0
        rows = np.flatnonzero(~inner)
        for r, kk in zip(rows, k):
            np.add.at(T[r], np.searchsorted(columns, self.cols[kk]), self.coefs[kk])
        return columns, T


def build_constraints(space_act: FESpace, space_in: Optional[FESpace],
                      node_to_root: dict | np.ndarray) -> ConstraintSet:
    """Extrapolation constraints of the outer nodes from their root cells."""
    mesh = space_act.mesh
    q = space_act.q
    n_in = space_act.n_in
    outer = space_act.outer_dofs
    if isinstance(node_to_root, dict):
        roots = np.array([node_to_root[int(b)] for b in outer], dtype=np.int64)
    else:
        roots = np.asarray(node_to_root, dtype=np.int64)
    if len(roots) != len(outer):
        raise ValueError("node_to_root must cover exactly the outer nodes")
    if len(roots) and np.any(mesh.cell_class[roots] != INTERIOR):
        raise AssertionError("outer node mapped to a non-interior cell")
    ref_space = space_in if space_in is not None else space_act
    if len(roots):
        cols = cell_lattice_ids(mesh, q, roots)
        lookup = np.full(int(np.prod(space_act.lattice_shape)), -1, dtype=np.int64)
        lookup[ref_space.dof_lattice[:n_in]] = np.arange(n_in)
        cols = lookup[cols]
        assert np.all(cols >= 0)
        xi = space_act.reference_coords(roots, space_act.dof_coords(outer))
        coefs = tensor_basis(q, xi, grad=False)
    else:
        nl = (q + 1) ** mesh.dim
        cols = np.zeros((0, nl), dtype=np.int64)
        coefs = np.zeros((0, nl))
    return ConstraintSet(n_in=n_in, n_act=space_act.n_act, root_cell=roots,
                         cols=cols, coefs=coefs)


def extend(constraints: ConstraintSet, u_in) -> np.ndarray:
    """E u = [u, C u]."""
    u_in = np.asarray(u_in, dtype=float)
    if u_in.shape[0] != constraints.n_in:
        raise ValueError(f"expected {constraints.n_in} interior coefficients, "
                         f"got {u_in.shape[0]}")
    cu = np.einsum("bk,bk...->b...", constraints.coefs, u_in[constraints.cols])
    return np.concatenate([u_in, cu])


def spectral_norm(M: np.ndarray, tol: float = 1e-8, maxiter: int = 1000) -> float:
    """2-norm of a small dense matrix by power iteration on M^T M."""
    M = np.atleast_2d(M)
    if M.size == 0 or not np.any(M):
        return 0.0
    G = M.T @ M
    x = np.ones(G.shape[0]) / np.sqrt(G.shape[0])
    x += 1e-3 * np.arange(G.shape[0])  # avoid orthogonality to the top mode
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(maxiter):
        y = G @ x
        lam_new = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(lam))


def cell_constraint_blocks(space_act: FESpace, constraints: ConstraintSet):
    """Per cut cell, the dense block of C for its outer nodes.

    Yields ``(cell, rows, columns, C_K)``.
    """
    mesh = space_act.mesh
    for cell in mesh.cut_cells:
        dofs = space_act.dofs_of([cell])[0]
        outer = dofs[dofs >= constraints.n_in]
        if outer.size == 0:
            continue
        k = outer - constraints.n_in
        columns = np.unique(constraints.cols[k])
        CK = np.zeros((len(outer), len(columns)))
        for r, kk in enumerate(k):
            np.add.at(CK[r], np.searchsorted(columns, constraints.cols[kk]),
                      constraints.coefs[kk])
        yield int(cell), outer, columns, CK


def cell_extension_bound(CK: np.ndarray) -> float:
    return 1.0 + spectral_norm(CK) ** 2


def extension_norm_bound(constraints: ConstraintSet, space_act: Optional[FESpace] = None) -> float:
    """Computable bound 1 + n_cell * max_K ||C_K||^2 on ||E||^2.

    ``n_cell = 2**dim`` is the largest number of cells sharing a vertex.
    """
    if constraints.n_out == 0 or space_act is None:
        if constraints.n_out == 0:
            return 1.0
        raise ValueError("space required to form cell blocks")
    n_cell = 2 ** space_act.mesh.dim
    worst = max((spectral_norm(CK) ** 2 for *_, CK in
                 cell_constraint_blocks(space_act, constraints)), default=0.0)
    return 1.0 + n_cell * worst


# --------------------------------------------------------- interpolation

def interpolate(space: FESpace, field_fn: Callable, constraints: Optional[ConstraintSet] = None) -> np.ndarray:
    """Nodal interpolant as active coefficients.

    For the aggregated flavour only interior nodes are sampled and the outer
    values come from the extension.
    """
    if space.flavor == "aggregated" or (constraints is not None and space.flavor != "interior"):
        if constraints is None:
            raise ValueError("aggregated interpolation needs constraints")
        u_in = field_fn(space.dof_coords(np.arange(space.n_in)))
        return extend(constraints, u_in)
    if space.flavor == "interior":
        return field_fn(space.dof_coords())
    return field_fn(space.dof_coords())


def evaluate(space: FESpace, u_act: np.ndarray, cells: np.ndarray, x: np.ndarray,
             grad: bool = False):
    """Evaluate the FE function with active coefficients at points ``x`` of ``cells``."""
    xi = space.reference_coords(cells, x)
    dofs = space.dofs_of(cells)
    coeff = u_act[dofs]
    if not grad:
        vals = tensor_basis(space.q, xi, grad=False)
        return np.einsum("pi,pi->p", vals, coeff)
    vals, grads = tensor_basis(space.q, xi)
    g = np.einsum("pid,pi->pd", grads, coeff) / space.mesh.h
    return np.einsum("pi,pi->p", vals, coeff), g

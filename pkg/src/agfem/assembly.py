"""Nitsche-Poisson stiffness, right-hand side and mass matrices.

Interior cells share one reference element matrix. Cut-cell matrices are
integrated on the cut quadrature; for the aggregated space each cut-cell block
is mapped to interior dofs with its local extension ``T_K^T A_K T_K`` inside
the cell loop before scattering.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fespace import ConstraintSet, FESpace, tensor_basis
from .quadrature import QuadratureSet, tensor_gauss

log = logging.getLogger(__name__)

TAU_RULES = ("fixed_beta_over_h", "local_eigenvalue")


@dataclass
class NitscheParams:
    beta: float = 100.0
    rule: str = "fixed_beta_over_h"
    # margin over the local constant under the eigenvalue rule
    safety: float = 2.0

    def __post_init__(self):
        if self.rule not in TAU_RULES:
            raise ValueError(f"unknown tau rule {self.rule!r}")
        if not self.beta > 0:
            raise ValueError("beta must be positive")


@dataclass
class SparseSystem:
    A: sp.csr_matrix
    b: np.ndarray
    flavor: str
    tau: np.ndarray = field(repr=False)
    tau_rule: str = "fixed_beta_over_h"

    @property
    def n(self) -> int:
        return self.A.shape[0]


# ------------------------------------------------------------ references

def reference_matrices(space: FESpace, npts: Optional[int] = None):
    """Stiffness and mass matrices of one full cell, (n_loc, n_loc) each."""
    mesh = space.mesh
    n = space.q + 1 if npts is None else npts
    ref, w = tensor_gauss(mesh.dim, n)
    vals, grads = tensor_basis(space.q, ref)
    grads = grads / mesh.h
    w = w * mesh.cell_volume
    K = np.einsum("p,pid,pjd->ij", w, grads, grads)
    M = np.einsum("p,pi,pj->ij", w, vals, vals)
    return K, M


def interior_load(space: FESpace, cells: np.ndarray, f: Callable, npts: Optional[int] = None):
    """Cell load vectors int f phi_i for full cells, (N, n_loc)."""
    mesh = space.mesh
    n = space.q + 1 if npts is None else npts
    ref, w = tensor_gauss(mesh.dim, n)
    vals = tensor_basis(space.q, ref, grad=False)
    x = mesh.cell_origin(cells)[:, None, :] + ref[None] * mesh.h
    fx = f(x)
    return np.einsum("cp,p,pi->ci", fx, w * mesh.cell_volume, vals)


# -------------------------------------------------------------- cut cells

def _segment_matrix(owner: np.ndarray, n_rows: int) -> sp.csr_matrix:
    P = len(owner)
    return sp.csr_matrix((np.ones(P), (owner, np.arange(P))), shape=(n_rows, P))


def cut_cell_arrays(space: FESpace, quad: QuadratureSet, tau: Optional[np.ndarray] = None,
                    f: Optional[Callable] = None, g_D: Optional[Callable] = None,
                    g_N: Optional[Callable] = None, neumann: Optional[np.ndarray] = None,
                    what=("D", "B", "nitsche", "M", "rhs"), chunk: int = 512):
    """Element arrays for all cut cells in ``quad.cells`` order.

    Keys: ``D`` bulk stiffness, ``B`` int (n.grad u)(n.grad v), ``nitsche``
    the surface part of the Nitsche form (needs ``tau``), ``M`` mass,
    ``rhs`` load vector (needs ``f``; Dirichlet data ``g_D`` enters through
    Nitsche). ``neumann`` flags cells whose boundary is Neumann instead.
    """
    mesh = space.mesh
    ncut = len(quad.cells)
    nl = space.n_loc
    out = {k: np.zeros((ncut, nl, nl)) for k in what if k != "rhs"}
    if "rhs" in what:
        out["rhs"] = np.zeros((ncut, nl))
    if neumann is None:
        neumann = np.zeros(ncut, dtype=bool)
    origins = mesh.cell_origin(quad.cells)

    for c0 in range(0, ncut, chunk):
        c1 = min(c0 + chunk, ncut)
        b = slice(quad.bulk_offsets[c0], quad.bulk_offsets[c1])
        own = quad.bulk_owner[b] - c0
        x = quad.bulk_points[b]
        w = quad.bulk_weights[b]
        vals, grads = tensor_basis(space.q, (x - origins[quad.bulk_owner[b]]) / mesh.h)
        grads = grads / mesh.h
        S = _segment_matrix(own, c1 - c0)
        if "D" in out:
            X = np.einsum("p,pid,pjd->pij", w, grads, grads).reshape(len(w), -1)
            out["D"][c0:c1] = (S @ X).reshape(-1, nl, nl)
        if "M" in out:
            X = np.einsum("p,pi,pj->pij", w, vals, vals).reshape(len(w), -1)
            out["M"][c0:c1] = (S @ X).reshape(-1, nl, nl)
        if "rhs" in out and f is not None:
            out["rhs"][c0:c1] += S @ (vals * (w * f(x))[:, None])

        s = slice(quad.surface_offsets[c0], quad.surface_offsets[c1])
        sown = quad.surface_owner[s]
        if sown.size == 0:
            continue
        x = quad.surface_points[s]
        w = quad.surface_weights[s]
        nrm = quad.surface_normals[s]
        vals, grads = tensor_basis(space.q, (x - origins[sown]) / mesh.h)
        dn = np.einsum("pid,pd->pi", grads / mesh.h, nrm)
        S = _segment_matrix(sown - c0, c1 - c0)
        dirichlet = ~neumann[sown]
        wd = w * dirichlet
        if "B" in out:
            X = np.einsum("p,pi,pj->pij", wd, dn, dn).reshape(len(w), -1)
            out["B"][c0:c1] = (S @ X).reshape(-1, nl, nl)
        if "nitsche" in out:
            t = tau[sown]
            X = (np.einsum("p,pi,pj->pij", wd * t, vals, vals)
                 - np.einsum("p,pi,pj->pij", wd, vals, dn)
                 - np.einsum("p,pi,pj->pij", wd, dn, vals)).reshape(len(w), -1)
            out["nitsche"][c0:c1] = (S @ X).reshape(-1, nl, nl)
        if "rhs" in out:
            if g_D is not None:
                g = g_D(x)
                t = tau[sown] if tau is not None else 0.0
                r = (wd * g * t)[:, None] * vals - (wd * g)[:, None] * dn
                out["rhs"][c0:c1] += S @ r
            if g_N is not None and neumann.any():
                r = (w * (~dirichlet) * g_N(x))[:, None] * vals
                out["rhs"][c0:c1] += S @ r
    return out


def local_nitsche_constant(space: FESpace, quad: QuadratureSet, cell: int,
                           arrays: Optional[dict] = None) -> float:
    """Largest eigenvalue of B_K u = lambda D_K u on one cut cell.

    Constants lie in the kernel of both forms; D_K is shifted by
    ``1e-12 * trace(D_K) / n`` so the problem is definite.
    """
    i = quad.position(cell)
    if arrays is None:
        sub = _single_cell_quad(quad, i)
        arrays = cut_cell_arrays(space, sub, what=("D", "B"))
        D, B = arrays["D"][0], arrays["B"][0]
    else:
        D, B = arrays["D"][i], arrays["B"][i]
    return _generalized_max(B, D, cell)


def _generalized_max(B, D, cell=None) -> float:
    n = D.shape[0]
    tr = float(np.trace(D))
    if not np.isfinite(tr) or tr <= 1e-300:
        warnings.warn(f"cell {cell}: vanishing bulk stiffness, C_K unbounded")
        return float("inf")
    if not np.any(B):
        return 0.0
    lam = sla.eigh(B, D + 1e-12 * tr / n * np.eye(n), eigvals_only=True)
    lam = lam[np.isfinite(lam)]
    return float(lam.max())


def _single_cell_quad(quad: QuadratureSet, i: int) -> QuadratureSet:
    b = slice(quad.bulk_offsets[i], quad.bulk_offsets[i + 1])
    s = slice(quad.surface_offsets[i], quad.surface_offsets[i + 1])
    t = quad.simplex_owner == i
    return QuadratureSet(
        cells=quad.cells[i:i + 1],
        bulk_points=quad.bulk_points[b], bulk_weights=quad.bulk_weights[b],
        bulk_owner=np.zeros(b.stop - b.start, dtype=np.int64),
        bulk_offsets=np.array([0, b.stop - b.start]),
        surface_points=quad.surface_points[s], surface_weights=quad.surface_weights[s],
        surface_normals=quad.surface_normals[s],
        surface_owner=np.zeros(s.stop - s.start, dtype=np.int64),
        surface_offsets=np.array([0, s.stop - s.start]),
        simplices=quad.simplices[t], simplex_owner=np.zeros(int(t.sum()), dtype=np.int64),
        degree=quad.degree, subdivision_depth=quad.subdivision_depth, dim=quad.dim)


def nitsche_tau(space: FESpace, quad: QuadratureSet, params: NitscheParams,
                arrays: Optional[dict] = None) -> np.ndarray:
    """Penalty per cut cell (aligned with ``quad.cells``)."""
    h = space.mesh.h_max
    tau = np.full(len(quad.cells), params.beta / h)
    if params.rule == "local_eigenvalue":
        if arrays is None:
            arrays = cut_cell_arrays(space, quad, what=("D", "B"))
        ck = np.array([_generalized_max(arrays["B"][i], arrays["D"][i], c)
                       for i, c in enumerate(quad.cells)])
        tau = np.maximum(tau, params.safety * ck)
    return tau


# ------------------------------------------------------------------ scatter

def _scatter(space: FESpace, constraints: Optional[ConstraintSet], Kref: np.ndarray,
             interior_vec: Optional[np.ndarray], cut_cells: np.ndarray,
             cut_mats: np.ndarray, cut_vecs: Optional[np.ndarray], aggregated: bool):
    mesh = space.mesh
    n = space.n_in if aggregated else space.n_act
    nl = space.n_loc
    interior = mesh.interior_cells
    rows, cols, data = [], [], []
    b = np.zeros(n)

    if interior.size:
        dofs = space.dofs_of(interior)
        rows.append(np.repeat(dofs, nl, axis=1).ravel())
        cols.append(np.tile(dofs, (1, nl)).ravel())
        data.append(np.broadcast_to(Kref.ravel(), (len(interior), nl * nl)).ravel())
        if interior_vec is not None:
            np.add.at(b, dofs.ravel(), interior_vec.ravel())

    if cut_cells.size:
        cdofs = space.dofs_of(cut_cells)
        if not aggregated:
            rows.append(np.repeat(cdofs, nl, axis=1).ravel())
            cols.append(np.tile(cdofs, (1, nl)).ravel())
            data.append(cut_mats.ravel())
            if cut_vecs is not None:
                np.add.at(b, cdofs.ravel(), cut_vecs.ravel())
        else:
            for i in range(len(cut_cells)):
                columns, T = constraints.expand_local(cdofs[i])
                Ae = T.T @ cut_mats[i] @ T
                m = len(columns)
                rows.append(np.repeat(columns, m))
                cols.append(np.tile(columns, m))
                data.append(Ae.ravel())
                if cut_vecs is not None:
                    b[columns] += T.T @ cut_vecs[i]

    A = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    if not np.all(np.isfinite(A.data)):
        bad = _first_bad_cell(cut_cells, cut_mats)
        raise FloatingPointError(f"non-finite matrix entries (cell {bad})")
    return A, b


def _first_bad_cell(cells, mats):
    for c, m in zip(cells, mats):
        if not np.all(np.isfinite(m)):
            return int(c)
    return None


def _check_flavor(space, constraints):
    aggregated = space.flavor == "aggregated"
    if aggregated and constraints is None:
        raise ValueError("aggregated assembly requires constraints")
    return aggregated


def assemble_stiffness(space: FESpace, quad: QuadratureSet, params: NitscheParams,
                       g_D: Callable, f: Callable, constraints: Optional[ConstraintSet] = None,
                       g_N: Optional[Callable] = None, neumann: Optional[np.ndarray] = None,
                       tau: Optional[np.ndarray] = None) -> SparseSystem:
    """Nitsche system on the active (standard) or aggregated space."""
    aggregated = _check_flavor(space, constraints)
    arrays = cut_cell_arrays(space, quad, what=("D", "B"))
    if tau is None:
        tau = nitsche_tau(space, quad, params, arrays)
    more = cut_cell_arrays(space, quad, tau=tau, f=f, g_D=g_D, g_N=g_N, neumann=neumann,
                           what=("nitsche", "rhs"))
    Kref, _ = reference_matrices(space)
    interior = space.mesh.interior_cells
    fin = interior_load(space, interior, f) if interior.size else None
    mats = arrays["D"] + more["nitsche"]
    A, b = _scatter(space, constraints, Kref, fin, quad.cells, mats, more["rhs"], aggregated)
    return SparseSystem(A=A, b=b, flavor="aggregated" if aggregated else "standard",
                        tau=tau, tau_rule=params.rule)


def assemble_mass(space: FESpace, quad: QuadratureSet,
                  constraints: Optional[ConstraintSet] = None) -> sp.csr_matrix:
    """M_ab = int_Omega (E phi_a)(E phi_b) (or phi_a phi_b on the active space)."""
    aggregated = _check_flavor(space, constraints)
    arrays = cut_cell_arrays(space, quad, what=("M",))
    _, Mref = reference_matrices(space)
    M, _ = _scatter(space, constraints, Mref, None, quad.cells, arrays["M"], None, aggregated)
    return M


def global_constrained_matrix(A_act: sp.spmatrix, constraints: ConstraintSet) -> sp.csr_matrix:
    """E^T A E with the global extension matrix (reference path)."""
    E = constraints.E
    return (E.T @ A_act @ E).tocsr()


def write_matrix_market(path, A: sp.spmatrix, comment: str = "") -> None:
    from scipy.io import mmwrite
    mmwrite(str(path), sp.coo_matrix(A), comment=comment, symmetry="general")

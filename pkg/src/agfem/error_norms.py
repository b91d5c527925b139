"""Energy and L2 errors of a discrete solution on the discretised domain."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fespace import ConstraintSet, FESpace, extend, tensor_basis
from .geometry import ManufacturedSolution
from .quadrature import QuadratureSet, tensor_gauss


@dataclass
class ErrorReport:
    energy_error: float
    l2_error: float
    h: float
    q: int
    dofs: int


def _accumulate(space, cells, x, w, u_act, exact, chunk=200_000):
    e2 = 0.0
    l2 = 0.0
    mesh = space.mesh
    for s in range(0, len(w), chunk):
        sl = slice(s, s + chunk)
        c = cells[sl]
        xi = (x[sl] - mesh.cell_origin(c)) / mesh.h
        vals, grads = tensor_basis(space.q, xi)
        coeff = u_act[space.dofs_of(c)]
        uh = np.einsum("pi,pi->p", vals, coeff)
        guh = np.einsum("pid,pi->pd", grads, coeff) / mesh.h
        du = exact.u(x[sl]) - uh
        dg = exact.grad_u(x[sl]) - guh
        l2 += float(np.sum(w[sl] * du * du))
        e2 += float(np.sum(w[sl] * np.sum(dg * dg, axis=1)))
    return e2, l2


def compute_errors(space: FESpace, quad: QuadratureSet, u_h: np.ndarray,
                   exact: ManufacturedSolution, constraints: Optional[ConstraintSet] = None,
                   npts: Optional[int] = None) -> ErrorReport:
    """||grad(u - u_h)|| and ||u - u_h|| over the active cells' share of Omega.

    ``u_h`` may hold interior coefficients (extended with ``constraints``) or
    active ones. Full cells use a tensor Gauss rule with ``q + 2`` points per
    axis; cut cells use ``quad``, which callers build one degree above the
    assembly rule.
    """
    mesh = space.mesh
    u_h = np.asarray(u_h, dtype=float)
    if u_h.shape[0] == space.n_act:
        u_act = u_h
    elif constraints is not None and u_h.shape[0] == constraints.n_in:
        u_act = extend(constraints, u_h)
    else:
        raise ValueError(f"coefficient vector of length {u_h.shape[0]} does not match "
                         f"the space ({space.n_act} active dofs)")

    n = space.q + 2 if npts is None else npts
    ref, w = tensor_gauss(mesh.dim, n)
    interior = mesh.interior_cells
    e2 = l2 = 0.0
    if interior.size:
        step = max(1, 200_000 // len(w))
        for s in range(0, len(interior), step):
            cc = interior[s:s + step]
            x = (mesh.cell_origin(cc)[:, None, :] + ref[None] * mesh.h).reshape(-1, mesh.dim)
            cells = np.repeat(cc, len(w))
            ww = np.tile(w * mesh.cell_volume, len(cc))
            a, b = _accumulate(space, cells, x, ww, u_act, exact)
            e2 += a
            l2 += b
    if len(quad.cells):
        cells = quad.cells[quad.bulk_owner]
        a, b = _accumulate(space, cells, quad.bulk_points, quad.bulk_weights, u_act, exact)
        e2 += a
        l2 += b
    return ErrorReport(energy_error=float(np.sqrt(e2)), l2_error=float(np.sqrt(l2)),
                       h=mesh.h_max, q=space.q, dofs=space.n_dofs)

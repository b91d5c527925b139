"""Linear solvers and 2-norm condition number estimates for symmetric matrices."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


@dataclass
class SolveReport:
    x: np.ndarray = field(repr=False)
    iterations: int
    residual: float
    converged: bool
    residual_history: list = field(default_factory=list, repr=False)


@dataclass
class CondEstimate:
    lambda_max: float
    lambda_min: float
    kappa: float
    method: str
    iterations: int
    lower_bound: bool = False


def solve_cg(A, b, rtol: float = 1e-12, maxit: Optional[int] = None,
             precond: str = "none", x0: Optional[np.ndarray] = None,
             callback: Optional[Callable] = None) -> SolveReport:
    """Preconditioned conjugate gradients for symmetric positive definite A."""
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    maxit = 10 * n if maxit is None else maxit
    if precond == "jacobi":
        diag = A.diagonal() if sp.issparse(A) else np.diag(A)
        if np.any(diag <= 0):
            raise ValueError("Jacobi preconditioner needs a positive diagonal")
        minv = 1.0 / diag
    elif precond == "none":
        minv = None
    else:
        raise ValueError(f"unknown preconditioner {precond!r}")

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return SolveReport(np.zeros(n), 0, 0.0, True)
    r = b - A @ x
    z = r * minv if minv is not None else r.copy()
    p = z.copy()
    rz = r @ z
    hist = [np.linalg.norm(r) / bnorm]
    it = 0
    while hist[-1] > rtol and it < maxit:
        Ap = A @ p
        pAp = p @ Ap
        if not pAp > 0.0:
            log.warning("CG breakdown: non-positive curvature %g", pAp)
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = r * minv if minv is not None else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        hist.append(np.linalg.norm(r) / bnorm)
        if callback is not None:
            callback(x)
    true_res = np.linalg.norm(b - A @ x) / bnorm
    return SolveReport(x, it, float(true_res), bool(true_res <= rtol * 10 and np.isfinite(true_res)), hist)


def solve_direct(A, b) -> SolveReport:
    """Sparse LU solve; the report's residual is the true relative residual."""
    b = np.asarray(b, dtype=float)
    try:
        lu = spla.splu(sp.csc_matrix(A))
        x = lu.solve(b)
    except RuntimeError as err:  # exactly singular factor
        log.warning("direct solve failed: %s", err)
        return SolveReport(np.full(b.shape, np.nan), 0, float("inf"), False)
    bn = np.linalg.norm(b)
    res = np.linalg.norm(b - A @ x) / (bn if bn > 0 else 1.0)
    ok = bool(np.all(np.isfinite(x)) and res <= 1e-8)
    return SolveReport(x, 0, float(res), ok)


# ------------------------------------------------------------------ Lanczos

def lanczos(matvec: Callable, n: int, maxiter: int = 200, tol: float = 1e-8,
            seed: int = 0, v0: Optional[np.ndarray] = None, min_iter: int = 10):
    """Lanczos with full reorthogonalisation.

    Stops when both extreme Ritz values have residual bound
    ``|beta_k s_k| <= tol * |theta|``. Returns ``(theta_min, theta_max,
    iterations, history)`` where history holds the extreme Ritz values per step.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) if v0 is None else np.array(v0, dtype=float)
    v /= np.linalg.norm(v)
    m = min(maxiter, n)
    Q = np.zeros((m + 1, n))
    Q[0] = v
    alpha = np.zeros(m)
    beta = np.zeros(m)
    history = []
    k = 0
    for k in range(m):
        w = matvec(Q[k])
        alpha[k] = Q[k] @ w
        w = w - alpha[k] * Q[k] - (beta[k - 1] * Q[k - 1] if k > 0 else 0.0)
        for _ in range(2):
            w -= Q[:k + 1].T @ (Q[:k + 1] @ w)
        beta[k] = np.linalg.norm(w)
        T = np.diag(alpha[:k + 1]) + np.diag(beta[:k], 1) + np.diag(beta[:k], -1)
        theta, S = np.linalg.eigh(T)
        history.append((theta[0], theta[-1]))
        resid = np.abs(beta[k] * S[-1, [0, -1]])
        scale = np.maximum(np.abs(theta[[0, -1]]), 1e-300)
        if beta[k] <= 1e-14 * max(abs(theta[-1]), abs(theta[0]), 1e-300):
            break
        if k + 1 >= min(min_iter, m) and np.all(resid <= tol * scale):
            break
        Q[k + 1] = w / beta[k]
    th_min, th_max = history[-1]
    return float(th_min), float(th_max), k + 1, history


def cond_estimate(A, solver: str = "direct", tol: float = 1e-6, maxiter: int = 200,
                  seed: int = 0, cg_rtol: float = 1e-10) -> CondEstimate:
    """2-norm condition number of a symmetric matrix.

    The largest eigenvalue comes from Lanczos on ``A``; the smallest from
    Lanczos on ``A^{-1}`` applied by ``solver`` ("direct" LU or "cg"). If the
    inner solves fail, the smallest Ritz value of ``A`` is used instead and the
    estimate is flagged as a lower bound.
    """
    n = A.shape[0]
    if n == 0:
        raise ValueError("empty matrix")
    if n == 1:
        a = float(A[0, 0]) if not sp.issparse(A) else float(A.toarray()[0, 0])
        return CondEstimate(abs(a), abs(a), 1.0, "exact", 0)

    def mv(x):
        return A @ x

    lo, hi, it1, _ = lanczos(mv, n, maxiter=maxiter, tol=tol, seed=seed)
    lam_max = max(abs(lo), abs(hi))

    failed = False
    if solver == "direct":
        try:
            lu = spla.splu(sp.csc_matrix(A))
            inv = lu.solve
        except RuntimeError:
            failed = True
    elif solver == "cg":
        def inv(x):
            rep = solve_cg(A, x, rtol=cg_rtol, precond="jacobi")
            if not rep.converged:
                raise _InnerSolveFailed
            return rep.x
    else:
        raise ValueError(f"unknown solver {solver!r}")

    it2 = 0
    if not failed:
        try:
            ilo, ihi, it2, _ = lanczos(inv, n, maxiter=maxiter, tol=tol, seed=seed + 1)
            inv_max = max(abs(ilo), abs(ihi))
            if not np.isfinite(inv_max) or inv_max == 0.0:
                failed = True
            else:
                lam_min = 1.0 / inv_max
        except _InnerSolveFailed:
            failed = True
    if failed:
        lam_min = min(abs(lo), abs(hi)) if lo * hi > 0 else abs(lo)
        log.warning("inverse iteration failed; kappa reported as a lower bound")
    kappa = lam_max / lam_min if lam_min > 0 else float("inf")
    return CondEstimate(lam_max, lam_min, max(kappa, 1.0), f"lanczos/{solver}",
                        it1 + it2, lower_bound=failed)


class _InnerSolveFailed(Exception):
    pass


def dense_condition(A) -> float:
    """Reference 2-norm condition number from a dense symmetric eigensolve."""
    M = A.toarray() if sp.issparse(A) else np.asarray(A)
    ev = np.abs(np.linalg.eigvalsh(M))
    return float(ev.max() / ev.min())

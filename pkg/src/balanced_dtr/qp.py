"""Convex quadratic programs over a scaled simplex.

Solves ``min 0.5 w'Qw + q'w`` subject to ``w >= 0`` and ``sum(w) = s``.

The main engine is a primal-dual active-set iteration (a semismooth Newton
method on the KKT system).  Each iteration solves an equality-constrained QP
on the current free set exactly, with one Cholesky factorization per
connected block of ``Q``; Gram matrices built from action-delta kernels are
block diagonal, so this is far cheaper than a dense solve.  If the active
set ever repeats without converging, an accelerated projected-gradient
method takes over and its support seeds a final exact polish.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigvalsh
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

__all__ = ["QpProblem", "QpSolution", "QpNumericError", "solve_qp", "kkt_residual", "project_simplex"]

log = logging.getLogger(__name__)


class QpNumericError(ArithmeticError):
    """The quadratic form has negative curvature beyond tolerance."""

    def __init__(self, message: str, min_eigenvalue: float):
        super().__init__(f"{message} (smallest eigenvalue estimate {min_eigenvalue:.3e})")
        self.min_eigenvalue = min_eigenvalue


@dataclass(frozen=True, eq=False)
class QpProblem:
    Q: np.ndarray
    q: np.ndarray
    sum_target: float
    kkt_tol: float = 1e-8
    max_iters: int | None = None

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "q", q)
        n = q.shape[0]
        if Q.shape != (n, n):
            raise ValueError(f"Q has shape {Q.shape}, expected ({n}, {n})")
        if not self.sum_target > 0:
            raise ValueError("sum_target must be positive")
        scale = max(1.0, float(np.max(np.abs(Q)))) if n else 1.0
        asym = float(np.max(np.abs(Q - Q.T))) if n else 0.0
        if asym > 1e-10 * scale:
            raise ValueError(f"Q is not symmetric (max asymmetry {asym:.3e})")

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def objective(self, w: np.ndarray) -> float:
        return float(0.5 * w @ (self.Q @ w) + self.q @ w)


@dataclass(frozen=True, eq=False)
class QpSolution:
    w: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    status: str
    method: str = field(default="pdas")

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def kkt_residual(Q: np.ndarray, q: np.ndarray, w: np.ndarray) -> float:
    """Norm of the projected gradient on the face of the simplex containing ``w``.

    The equality multiplier is the least-squares choice over the free
    coordinates; bound coordinates only contribute when their reduced
    gradient is negative.
    """
    g = Q @ w + q
    free = w > 0
    if not np.any(free):
        return float("inf")
    nu = -np.mean(g[free])
    r = g + nu
    r[~free] = np.minimum(r[~free], 0.0)
    return float(np.linalg.norm(r))


def project_simplex(v: np.ndarray, s: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{w >= 0, sum(w) = s}``."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - s
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def _blocks(Q: np.ndarray) -> list[np.ndarray]:
    n = Q.shape[0]
    ncomp, labels = connected_components(csr_matrix(Q != 0), directed=False)
    if ncomp == 1:
        return [np.arange(n)]
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(ncomp + 1))
    return [order[bounds[k] : bounds[k + 1]] for k in range(ncomp)]


def _factor(Q: np.ndarray, idx: np.ndarray, tol_scale: float):
    sub = Q[np.ix_(idx, idx)]
    try:
        return cho_factor(sub, lower=False, check_finite=False)
    except LinAlgError:
        lam_min = float(eigvalsh(sub, subset_by_index=[0, 0])[0])
        if lam_min < -tol_scale:
            raise QpNumericError("quadratic form is indefinite", lam_min) from None
        return None


def _pdas(p: QpProblem, blocks, free: np.ndarray, max_iters: int):
    Q, q, s, n = p.Q, p.q, p.sum_target, p.n
    tol_scale = 1e-8 * max(float(np.trace(Q)) / max(n, 1), 1e-300)
    seen = set()
    w = np.zeros(n)
    for it in range(1, max_iters + 1):
        if not np.any(free):
            free = np.ones(n, dtype=bool)
        key = np.packbits(free).tobytes()
        if key in seen:
            return w, it, "cycle"
        seen.add(key)

        u = np.zeros(n)
        v = np.zeros(n)
        for b in blocks:
            idx = b[free[b]]
            if idx.size == 0:
                continue
            cf = _factor(Q, idx, tol_scale)
            if cf is None:
                return w, it, "singular"
            u[idx] = cho_solve(cf, -q[idx], check_finite=False)
            v[idx] = cho_solve(cf, np.ones(idx.size), check_finite=False)
        vs = v[free].sum()
        if not vs > 0:
            return w, it, "singular"
        nu = (u[free].sum() - s) / vs
        w = np.where(free, u - nu * v, 0.0)
        mu = Q @ w + q + nu
        new_free = (free & (w > 0)) | (~free & (mu < 0))
        if np.array_equal(new_free, free):
            return w, it, "converged"
        free = new_free
    return w, max_iters, "max_iters"


def _projected_gradient(p: QpProblem, w0: np.ndarray, max_iters: int, tol: float):
    """FISTA with adaptive restart on the scaled simplex."""
    Q, q, s = p.Q, p.q, p.sum_target
    L = float(eigvalsh(Q, subset_by_index=[p.n - 1, p.n - 1])[0]) if p.n > 1 else float(Q[0, 0])
    L = max(L, 1e-300)
    w = project_simplex(w0, s)
    y, tk = w.copy(), 1.0
    best, best_r = w, kkt_residual(Q, q, w)
    for it in range(1, max_iters + 1):
        w_new = project_simplex(y - (Q @ y + q) / L, s)
        if (w_new - w) @ (Q @ w_new + q) > 0:  # restart on non-monotone step
            y, tk = w.copy(), 1.0
            continue
        tk_new = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
        y = w_new + ((tk - 1) / tk_new) * (w_new - w)
        w, tk = w_new, tk_new
        if it % 25 == 0:
            r = kkt_residual(Q, q, w)
            if r < best_r:
                best, best_r = w.copy(), r
            if r <= tol:
                break
    return best, it


def solve_qp(p: QpProblem, w0: np.ndarray | None = None) -> QpSolution:
    """Minimize ``0.5 w'Qw + q'w`` over ``{w >= 0, sum(w) = sum_target}``.

    ``w0`` only seeds the initial free set; the uniform vector is the default.
    """
    n = p.n
    if n == 0:
        raise ValueError("empty problem")
    max_iters = p.max_iters or 10 * n
    tol = p.kkt_tol * (1.0 + float(np.linalg.norm(p.q)))
    if n == 1:
        w = np.array([float(p.sum_target)])
        return QpSolution(w, p.objective(w), 0.0, 0, "converged", "trivial")

    blocks = _blocks(p.Q)
    free = np.ones(n, dtype=bool) if w0 is None else np.asarray(w0) > 0
    w, iters, status = _pdas(p, blocks, free, max_iters)
    method = "pdas"
    if status != "converged":
        log.debug("active-set iteration ended with %s after %d steps; switching to FISTA", status, iters)
        start = w if np.all(np.isfinite(w)) and w.sum() > 0 else np.full(n, p.sum_target / n)
        w_pg, pg_iters = _projected_gradient(p, start, max_iters, tol)
        iters += pg_iters
        method = "fista"
        w = w_pg
        polished, it2, st2 = _pdas(p, blocks, w_pg > 0, 50)
        iters += it2
        if st2 == "converged":
            w, method = polished, "fista+pdas"

    w = np.maximum(w, 0.0)
    total = w.sum()
    if total > 0:
        w *= p.sum_target / total
    res = kkt_residual(p.Q, p.q, w)
    status = "converged" if res <= tol else "max_iters"
    return QpSolution(w, p.objective(w), res, iters, status, method)

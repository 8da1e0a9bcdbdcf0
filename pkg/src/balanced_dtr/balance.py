"""Optimally balanced weights for one decision step.

The weights minimize the squared worst-case bias over the unit ball of an
RKHS plus a ridge penalty,

    (1/n^2) [W'QW - 2c'W + d] + (lam/n^2) ||W||^2,

over nonnegative weights with mean one.  ``(Q, c, d)`` come from
:func:`balanced_dtr.kernels.build_gram_pair`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import GramPair, KernelSpec, build_gram_pair, step_contexts
from .qp import QpProblem, QpSolution, solve_qp
from .trajectories import Dataset, Policy

__all__ = [
    "BalanceProblem",
    "BalanceSolution",
    "BalanceError",
    "build_balance_objective",
    "solve_balance",
    "dual_norm_at",
    "balance_objective_at",
    "ZERO_WEIGHT",
]

ZERO_WEIGHT = 1e-6


class BalanceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class BalanceProblem:
    """One balancing problem over ``n`` points.

    ``contexts`` is ``(n, p)``; ``lag_actions`` holds the earlier actions
    matched by the kernel's delta factor, ``(n, action_lags - 1)``;
    ``target_probs[i, k]`` is the target mass of ``action_set[k]`` at point i.
    """

    contexts: np.ndarray
    lag_actions: np.ndarray
    observed_actions: np.ndarray
    target_probs: np.ndarray
    action_set: tuple
    kernel: KernelSpec
    lam: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        n = len(self.observed_actions)
        if n < 1:
            raise ValueError("balance problem needs at least one point")
        if len(self.contexts) != n or len(self.target_probs) != n or len(self.lag_actions) != n:
            raise ValueError("contexts, lag actions, actions and target masses must share length n")

    @property
    def n(self) -> int:
        return len(self.observed_actions)

    @classmethod
    def for_step(cls, dataset: Dataset, t: int, target: Policy, kernel: KernelSpec, lam: float = 1.0):
        """Step-``t`` problem: history ``(x_{1:t}, a_{0:t-1})`` is the context, ``a_t`` the action."""
        x_hist, a_hist = dataset.history(t)
        Z, lags = step_contexts(kernel, x_hist, a_hist)
        return cls(
            Z, lags, dataset.actions[:, t - 1], target.probs(t, x_hist, a_hist),
            target.action_set(t), kernel, lam,
        )

    def gram(self) -> GramPair:
        return build_gram_pair(
            self.kernel, self.contexts, self.lag_actions, self.observed_actions,
            self.target_probs, self.action_set,
        )


@dataclass(frozen=True, eq=False)
class BalanceSolution:
    weights: np.ndarray
    dual_norm_sq: float
    regularizer: float
    objective: float
    ess: float
    zero_fraction: float
    qp: QpSolution

    @property
    def max_weight(self) -> float:
        return float(np.max(self.weights))


def build_balance_objective(p: BalanceProblem, gram: GramPair | None = None) -> tuple[QpProblem, float, GramPair]:
    """QP data ``(Q_eff, q_eff)``, the constant ``d`` and the Gram pieces.

    ``0.5 W'Q_eff W + q_eff'W + d/n^2`` equals the balance objective.
    """
    g = gram if gram is not None else p.gram()
    n = p.n
    scale = 2.0 / n**2
    Q_eff = scale * g.Q
    Q_eff[np.diag_indices(n)] += scale * p.lam
    return QpProblem(Q_eff, -scale * g.c, float(n)), g.d, g


def _quad(g: GramPair, w: np.ndarray) -> float:
    return float(w @ (g.Q @ w) - 2.0 * (g.c @ w) + g.d)


def dual_norm_at(p: BalanceProblem, w: np.ndarray, gram: GramPair | None = None) -> float:
    """Squared dual norm of the bias operator at weights ``w``, clamped at zero."""
    g = gram if gram is not None else p.gram()
    return max(_quad(g, np.asarray(w, dtype=float)) / p.n**2, 0.0)


def balance_objective_at(p: BalanceProblem, w: np.ndarray, gram: GramPair | None = None) -> float:
    g = gram if gram is not None else p.gram()
    w = np.asarray(w, dtype=float)
    return _quad(g, w) / p.n**2 + p.lam * float(w @ w) / p.n**2


def solve_balance(p: BalanceProblem, w0: np.ndarray | None = None) -> BalanceSolution:
    """Optimal balancing weights and their diagnostics.

    Raises
    ------
    BalanceError
        The QP did not reach its KKT tolerance, or the returned weights
        violate feasibility.
    """
    qp, d, g = build_balance_objective(p)
    sol = solve_qp(qp, w0)
    w = sol.w
    n = p.n
    if not sol.converged:
        raise BalanceError(
            f"QP stopped with status {sol.status} after {sol.iterations} iterations "
            f"(kkt residual {sol.kkt_residual:.3e}, n={n}, lambda={p.lam})"
        )
    if np.any(w < -1e-10) or abs(np.mean(w) - 1.0) > 1e-8:
        raise BalanceError(f"infeasible weights: min {w.min():.3e}, mean {w.mean():.12f}")
    dual = dual_norm_at(p, w, g)
    reg = p.lam * float(w @ w) / n**2
    return BalanceSolution(
        weights=w,
        dual_norm_sq=dual,
        regularizer=reg,
        objective=sol.objective + d / n**2,
        ess=float(np.sum(w) ** 2 / np.sum(w * w)),
        zero_fraction=float(np.mean(w < ZERO_WEIGHT)),
        qp=sol,
    )

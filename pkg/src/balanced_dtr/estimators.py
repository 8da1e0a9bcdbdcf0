"""Value estimators for dynamic treatment regimes.

All estimators are weighted averages of per-step rewards.  Step ``t`` uses a
cumulative weight ``W_{1:t}`` built from the first ``t`` decisions, and the
value is ``mean_i sum_t W_{1:t,i} R_{t,i}``.  With ``dataset.probabilities``
set, means become expectations under that trajectory distribution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Protocol, Sequence

import numpy as np

from .balance import ZERO_WEIGHT, BalanceProblem, BalanceSolution, solve_balance
from .kernels import KernelSpec
from .trajectories import Dataset, Policy, action_index

__all__ = [
    "EstimatorSpec",
    "EvalResult",
    "WeightSummary",
    "PositivityError",
    "NotFittedError",
    "OutcomeModel",
    "RidgeOutcomeModel",
    "density_ratios",
    "ipw_value",
    "ipw_T_value",
    "nipw_value",
    "balanced_value",
    "balanced_itr_value",
    "augmented_value",
    "evaluate",
]

POSITIVITY_TOL = 1e-12
DEGENERATE_TOL = 1e-12

Kind = Literal["ipw", "ipw_T", "nipw", "nipw_T", "balanced", "balanced_dr"]
KINDS = ("ipw", "ipw_T", "nipw", "nipw_T", "balanced", "balanced_dr")


class PositivityError(ValueError):
    def __init__(self, trajectory: int, step: int, mass: float):
        super().__init__(
            f"logging policy puts mass {mass:.3g} on the observed action of trajectory {trajectory} at step {step}"
        )
        self.trajectory = trajectory
        self.step = step


class NotFittedError(RuntimeError):
    pass


@dataclass(frozen=True)
class EstimatorSpec:
    kind: Kind
    kernel: KernelSpec | None = None
    lam: float = 1.0
    name: str | None = None
    outcome_model: object | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.kind.startswith("balanced"):
            if self.kernel is None:
                raise ValueError(f"{self.kind} estimator needs a kernel")
            if not self.lam > 0:
                raise ValueError("lambda must be positive")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind.startswith("balanced"):
            fam = {"gaussian": "G", "matern52": "M"}[self.kernel.family]
            tag = "bal_dr" if self.kind == "balanced_dr" else "bal"
            lam = "" if self.lam == 1.0 else f"_lam{self.lam:g}"
            return f"{tag}_{fam}{lam}"
        return self.kind


@dataclass(frozen=True)
class WeightSummary:
    """Summary of one weight vector (mean-one scale unless raw IPW)."""

    zero_fraction: float
    max_weight: float
    ess: float
    degenerate: bool = False

    @classmethod
    def of(cls, w: np.ndarray, degenerate: bool = False) -> "WeightSummary":
        w = np.asarray(w, dtype=float)
        ss = float(np.sum(w * w))
        ess = float(np.sum(w) ** 2 / ss) if ss > 0 else 0.0
        return cls(float(np.mean(w < ZERO_WEIGHT)), float(np.max(w)), ess, degenerate)


@dataclass(frozen=True, eq=False)
class EvalResult:
    """Estimated value with its per-step decomposition.

    ``final_weights`` summarizes the weights applied at the last step.
    """

    value: float
    per_step_values: np.ndarray
    per_step_diagnostics: tuple
    final_weights: WeightSummary

    @property
    def degenerate(self) -> bool:
        last = self.per_step_diagnostics[-1]
        return bool(getattr(last, "degenerate", False))


def _combine(dataset: Dataset, W: np.ndarray, diagnostics, final: np.ndarray, degenerate=False) -> EvalResult:
    """``W`` holds the weight applied to each ``R_{t,i}``, shape ``(n, T)``."""
    WR = W * dataset.rewards
    value = float(dataset.average(np.sum(WR, axis=1)))
    per_step = np.asarray(dataset.average(WR), dtype=float).reshape(-1)
    return EvalResult(value, per_step, tuple(diagnostics), WeightSummary.of(final, degenerate))


def density_ratios(dataset: Dataset, logging: Policy, target: Policy, t: int) -> np.ndarray:
    """Per-trajectory ratio of target to logging mass at the observed step-``t`` action.

    Raises
    ------
    PositivityError
        If the logging mass of an observed action is at most 1e-12.
    """
    x_hist, a_hist = dataset.history(t)
    obs = dataset.actions[:, t - 1]
    p_log = logging.probs(t, x_hist, a_hist)
    p_log = p_log[np.arange(len(obs)), action_index(logging.action_set(t), obs)]
    bad = np.flatnonzero(p_log <= POSITIVITY_TOL)
    if bad.size:
        raise PositivityError(int(bad[0]), t, float(p_log[bad[0]]))
    p_tgt = target.probs(t, x_hist, a_hist)
    p_tgt = p_tgt[np.arange(len(obs)), action_index(target.action_set(t), obs)]
    return p_tgt / p_log


def _cumulative_ratios(dataset: Dataset, logging: Policy, target: Policy) -> np.ndarray:
    rho = np.column_stack([density_ratios(dataset, logging, target, t) for t in range(1, dataset.horizon + 1)])
    return np.cumprod(rho, axis=1)


def ipw_value(dataset: Dataset, logging: Policy, target: Policy) -> EvalResult:
    """Per-step IPW: ``R_t`` is weighted by the product of the first ``t`` ratios."""
    W = _cumulative_ratios(dataset, logging, target)
    diags = [WeightSummary.of(W[:, t]) for t in range(dataset.horizon)]
    return _combine(dataset, W, diags, W[:, -1])


def ipw_T_value(dataset: Dataset, logging: Policy, target: Policy) -> EvalResult:
    """Full-horizon IPW: every reward gets the product of all ``T`` ratios."""
    W = _cumulative_ratios(dataset, logging, target)
    full = np.repeat(W[:, -1:], dataset.horizon, axis=1)
    summary = WeightSummary.of(full[:, 0])
    return _combine(dataset, full, [summary] * dataset.horizon, full[:, 0])


def _normalize(dataset: Dataset, w: np.ndarray) -> tuple[np.ndarray, bool]:
    if np.all(w <= DEGENERATE_TOL):
        return np.ones_like(w), True
    return w / dataset.average(w), False


def nipw_value(dataset: Dataset, logging: Policy, target: Policy, full_horizon: bool = False) -> EvalResult:
    """Self-normalized (Hajek) IPW.

    Per step, the cumulative ratio product is rescaled to mean one; with
    ``full_horizon`` the single product up to ``T`` is normalized and applied
    to every reward.  When every raw weight is zero the weights fall back to
    uniform and the step is flagged degenerate.
    """
    W = _cumulative_ratios(dataset, logging, target)
    T = dataset.horizon
    if full_horizon:
        wn, deg = _normalize(dataset, W[:, -1])
        out = np.repeat(wn[:, None], T, axis=1)
        diag = WeightSummary.of(wn, deg)
        return _combine(dataset, out, [diag] * T, wn, deg)
    out = np.empty_like(W)
    diags = []
    for t in range(T):
        out[:, t], deg = _normalize(dataset, W[:, t])
        diags.append(WeightSummary.of(out[:, t], deg))
    return _combine(dataset, out, diags, out[:, -1], diags[-1].degenerate)


def balanced_value(dataset: Dataset, target: Policy, kernel: KernelSpec, lam: float = 1.0) -> EvalResult:
    """Sequentially balanced estimate.

    Step ``t`` solves one balancing problem with ``(x_{1:t}, a_{1:t-1})`` as
    covariates and ``a_t`` as the action, giving ``W_t``; step-``t`` rewards
    get ``W_{1:t} = W_1 * ... * W_t``.  The logging policy is never used.
    """
    if dataset.probabilities is not None:
        raise ValueError("balanced weights are defined for an empirical sample only")
    sols: list[BalanceSolution] = []
    W = np.empty((dataset.n, dataset.horizon))
    cum = None
    for t in range(1, dataset.horizon + 1):
        sol = solve_balance(BalanceProblem.for_step(dataset, t, target, kernel, lam))
        sols.append(sol)
        cum = sol.weights if cum is None else cum * sol.weights
        W[:, t - 1] = cum
    return _combine(dataset, W, sols, W[:, -1])


def balanced_itr_value(
    covariates: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    target_probs: np.ndarray,
    action_set: tuple,
    kernel: KernelSpec,
    lam: float = 1.0,
    lag_actions: np.ndarray | None = None,
) -> tuple[float, BalanceSolution]:
    """Single-decision balanced estimate ``mean(W* R)`` from flat arrays."""
    X = np.asarray(covariates, dtype=float)
    n = X.shape[0]
    lags = np.empty((n, 0)) if lag_actions is None else np.asarray(lag_actions, dtype=float).reshape(n, -1)
    prob = BalanceProblem(X, lags, np.asarray(actions, dtype=float), target_probs, tuple(action_set), kernel, lam)
    sol = solve_balance(prob)
    R = np.asarray(rewards, dtype=float).reshape(n, 1)
    value = float(np.mean(np.sum(sol.weights[:, None] * R, axis=1)))
    return value, sol


class OutcomeModel(Protocol):
    fitted: bool

    def fit(self, dataset: Dataset) -> "OutcomeModel": ...

    def predict(self, t: int, x_hist: np.ndarray, a_hist: np.ndarray) -> np.ndarray:
        """Predicted ``E[R_t | x_{1:t}, a_{1:t}]``; ``a_hist`` holds ``A_0..A_t``."""

    def plug_in_value(self, t: int, dataset: Dataset, target: Policy) -> float:
        """Model-based estimate of the step-``t`` target value."""


class RidgeOutcomeModel:
    """Per-step ridge regression of ``R_t`` on ``[onehot(a_t), x_t, a_t * x_t]``.

    The plug-in value averages predictions over the logged histories with the
    step-``t`` action drawn from the target.
    """

    def __init__(self, ridge: float = 1e-3):
        self.ridge = ridge
        self.coefs: list[np.ndarray] = []
        self.actions: list[tuple] = []
        self.fitted = False

    def _features(self, t: int, x_t: np.ndarray, a_t: np.ndarray) -> np.ndarray:
        labels = self.actions[t - 1]
        onehot = np.eye(len(labels))[action_index(labels, a_t)]
        return np.hstack([onehot, x_t, a_t[:, None] * x_t])

    def fit(self, dataset: Dataset) -> "RidgeOutcomeModel":
        self.actions = list(dataset.action_sets)
        self.coefs = []
        for t in range(1, dataset.horizon + 1):
            F = self._features(t, dataset.covariates[:, t - 1], dataset.actions[:, t - 1])
            G = F.T @ F + self.ridge * np.eye(F.shape[1])
            self.coefs.append(np.linalg.solve(G, F.T @ dataset.rewards[:, t - 1]))
        self.fitted = True
        return self

    def predict(self, t, x_hist, a_hist):
        if not self.fitted:
            raise NotFittedError("outcome model has not been fitted")
        return self._features(t, x_hist[:, -1], a_hist[:, -1]) @ self.coefs[t - 1]

    def plug_in_value(self, t, dataset, target):
        if not self.fitted:
            raise NotFittedError("outcome model has not been fitted")
        x_hist, a_hist = dataset.history(t)
        probs = target.probs(t, x_hist, a_hist)
        total = np.zeros(dataset.n)
        for k, a in enumerate(target.action_set(t)):
            a_full = np.column_stack([a_hist, np.full(dataset.n, a)])
            total += probs[:, k] * self.predict(t, x_hist, a_full)
        return float(dataset.average(total))


def augmented_value(
    dataset: Dataset,
    target: Policy,
    weights_per_step: Sequence[np.ndarray],
    outcome_model: OutcomeModel,
) -> EvalResult:
    """Weighted residual correction added to an outcome-model plug-in.

    ``V_t = plug_in_t + mean_i W_{1:t,i} (R_{t,i} - mu_t(history_i))`` where
    ``W_{1:t}`` is the running product of ``weights_per_step``.
    """
    if not getattr(outcome_model, "fitted", False):
        raise NotFittedError("outcome model has not been fitted")
    T = dataset.horizon
    if len(weights_per_step) != T:
        raise ValueError(f"expected {T} weight vectors, got {len(weights_per_step)}")
    W = np.cumprod(np.column_stack([np.asarray(w, dtype=float) for w in weights_per_step]), axis=1)
    resid = np.empty((dataset.n, T))
    plug = np.empty(T)
    for t in range(1, T + 1):
        x_hist = dataset.covariates[:, :t, :]
        a_hist = dataset.action_history[:, : t + 1]
        resid[:, t - 1] = dataset.rewards[:, t - 1] - outcome_model.predict(t, x_hist, a_hist)
        plug[t - 1] = outcome_model.plug_in_value(t, dataset, target)
    corr = W * resid
    per_step = plug + np.asarray(dataset.average(corr), dtype=float).reshape(-1)
    value = float(np.sum(plug) + dataset.average(np.sum(corr, axis=1)))
    diags = [WeightSummary.of(W[:, t]) for t in range(T)]
    return EvalResult(value, per_step, tuple(diags), WeightSummary.of(W[:, -1]))


def evaluate(spec: EstimatorSpec, dataset: Dataset, logging: Policy | None, target: Policy) -> EvalResult:
    """Dispatch on ``spec.kind``."""
    kind = spec.kind
    if kind in ("ipw", "ipw_T", "nipw", "nipw_T") and logging is None:
        raise ValueError(f"{kind} needs the logging policy")
    if kind == "ipw":
        return ipw_value(dataset, logging, target)
    if kind == "ipw_T":
        return ipw_T_value(dataset, logging, target)
    if kind == "nipw":
        return nipw_value(dataset, logging, target)
    if kind == "nipw_T":
        return nipw_value(dataset, logging, target, full_horizon=True)
    bal = balanced_value(dataset, target, spec.kernel, spec.lam)
    if kind == "balanced":
        return bal
    model = spec.outcome_model if spec.outcome_model is not None else RidgeOutcomeModel()
    if not getattr(model, "fitted", False):
        model.fit(dataset)
    per_step = [s.weights for s in bal.per_step_diagnostics]
    dr = augmented_value(dataset, target, per_step, model)
    return EvalResult(dr.value, dr.per_step_values, bal.per_step_diagnostics, bal.final_weights)

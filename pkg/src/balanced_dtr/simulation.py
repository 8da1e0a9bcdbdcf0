"""Reference DTR simulation, its ground-truth value oracle and a toy fixture.

Reference process, for ``t = 1..T`` with actions in ``{-1, +1}``::

    X_1 ~ N(0, I_2)
    P_log(A_t = +1 | history) = expit(2 (X_t1 + X_t2) A_{t-1})
    pi_target(+1 | history)   = 1{(X_t1 + X_t2) A_{t-1} < 0}
    R_t     = 5 A_t + X_t1 + eps_t
    X_{t+1} = A_t + X_t + xi_t

with standard normal ``eps_t`` and ``xi_t``.

Random numbers
--------------
Trajectory ``i`` of ``sample_dataset(cfg, seed)`` draws from
``PCG64(SeedSequence(seed, spawn_key=(0, i)))``: first ``T + 1`` uniforms
``(u_0, u_1..u_T)``, then ``d + T + T*d`` standard normals laid out as
``X_1``, ``eps_1..eps_T``, ``xi_1..xi_T`` (row-major).  ``u_0 < 1/2`` sets a
random ``A_0 = +1``; ``A_t = +1`` iff ``u_t < P_log(+1)``.  Oracle rollouts
use chunks of ``ROLLOUT_CHUNK`` trajectories, chunk ``k`` drawing from
``SeedSequence(seed, spawn_key=(1, k))``.  Results therefore do not depend on
how work is split across processes.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .trajectories import Dataset, Policy, action_index

__all__ = [
    "DgpConfig",
    "ReferenceLogging",
    "ReferenceTarget",
    "sample_dataset",
    "true_value",
    "ToyFixture",
    "TabularPolicy",
    "default_fixture",
    "enumerate_fixture",
    "enumerate_fixture_value",
    "fixture_step_values",
    "fixture_population",
    "ExactFixtureModel",
    "sample_itr_low_overlap",
]

ACTIONS = (-1.0, 1.0)
ROLLOUT_CHUNK = 1 << 16


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of the reference process.

    ``initial_action`` is the pre-period action ``A_0``: a fixed label, or
    ``"random"`` for an independent fair ±1 draw per trajectory.
    """

    horizon: int = 3
    n: int = 800
    covariate_dim: int = 2
    action_gain: float = 5.0
    reward_covariate: int = 0
    logging_slope: float = 2.0
    initial_action: float | str = "random"

    def __post_init__(self):
        if self.horizon < 1 or self.n < 1:
            raise ValueError("horizon and n must be >= 1")
        if self.initial_action != "random" and float(self.initial_action) not in ACTIONS:
            raise ValueError(f"initial_action must be -1, +1 or 'random', got {self.initial_action!r}")

    def replace(self, **kw) -> "DgpConfig":
        from dataclasses import replace

        return replace(self, **kw)


class ReferenceLogging(Policy):
    """``P(+1) = expit(slope * sum(x_t) * a_{t-1})``."""

    deterministic = False

    def __init__(self, slope: float = 2.0):
        self.slope = slope

    def action_set(self, t):
        return ACTIONS

    def probs(self, t, x_hist, a_hist):
        p1 = expit(self.slope * x_hist[:, -1, :].sum(axis=1) * a_hist[:, -1])
        return np.column_stack([1.0 - p1, p1])


class ReferenceTarget(Policy):
    """``+1`` iff ``sum(x_t) * a_{t-1} < 0``, else ``-1``."""

    deterministic = True

    def action_set(self, t):
        return ACTIONS

    def choose(self, x_t: np.ndarray, a_prev: np.ndarray) -> np.ndarray:
        return np.where(x_t.sum(axis=1) * a_prev < 0, 1.0, -1.0)

    def probs(self, t, x_hist, a_hist):
        plus = (x_hist[:, -1, :].sum(axis=1) * a_hist[:, -1] < 0).astype(float)
        return np.column_stack([1.0 - plus, plus])


def _initial_actions(cfg: DgpConfig, u0: np.ndarray) -> np.ndarray:
    if cfg.initial_action == "random":
        return np.where(u0 < 0.5, 1.0, -1.0)
    return np.full(u0.shape, float(cfg.initial_action))


def _trajectory_noise(seed: int, index: int, T: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0, index))))
    return rng.random(T + 1), rng.standard_normal(d + T + T * d)


def _roll(cfg: DgpConfig, u: np.ndarray, x1: np.ndarray, eps: np.ndarray, xi: np.ndarray, policy: str):
    """Vectorized dynamics given stacked noise; ``policy`` is 'logging' or 'target'."""
    n, T, d = xi.shape
    X = np.empty((n, T, d))
    A = np.empty((n, T))
    R = np.empty((n, T))
    a0 = _initial_actions(cfg, u[:, 0])
    prev = a0
    x = x1
    for t in range(T):
        X[:, t] = x
        s = x.sum(axis=1) * prev
        if policy == "logging":
            a = np.where(u[:, t + 1] < expit(cfg.logging_slope * s), 1.0, -1.0)
        else:
            a = np.where(s < 0, 1.0, -1.0)
        A[:, t] = a
        R[:, t] = cfg.action_gain * a + x[:, cfg.reward_covariate] + eps[:, t]
        x = a[:, None] + x + xi[:, t]
        prev = a
    return X, A, R, a0


def sample_dataset(cfg: DgpConfig, seed: int) -> Dataset:
    """``cfg.n`` trajectories logged under the reference logging policy."""
    T, d, n = cfg.horizon, cfg.covariate_dim, cfg.n
    U = np.empty((n, T + 1))
    Z = np.empty((n, d + T + T * d))
    for i in range(n):
        U[i], Z[i] = _trajectory_noise(seed, i, T, d)
    x1 = Z[:, :d]
    eps = Z[:, d : d + T]
    xi = Z[:, d + T :].reshape(n, T, d)
    X, A, R, a0 = _roll(cfg, U, x1, eps, xi, "logging")
    return Dataset.from_arrays(X, A, R, ACTIONS, initial_actions=a0)


def true_value(cfg: DgpConfig, n_rollouts: int = 10**6, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo value of the target policy and its standard error."""
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    T, d = cfg.horizon, cfg.covariate_dim
    totals = np.empty(n_rollouts)
    for k, start in enumerate(range(0, n_rollouts, ROLLOUT_CHUNK)):
        m = min(ROLLOUT_CHUNK, n_rollouts - start)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(1, k))))
        u = rng.random((m, T + 1))
        z = rng.standard_normal((m, d + T + T * d))
        _, _, R, _ = _roll(cfg, u, z[:, :d], z[:, d : d + T], z[:, d + T :].reshape(m, T, d), "target")
        totals[start : start + m] = R.sum(axis=1)
    se = float(np.std(totals, ddof=1) / np.sqrt(n_rollouts)) if n_rollouts > 1 else float("nan")
    return float(np.mean(totals)), se


# --------------------------------------------------------------------------
# Toy fixture: T = 2, binary covariate and action, fully enumerable.


class TabularPolicy(Policy):
    """Policy given by ``table[t-1, x_t, idx(a_{t-1}), idx(a_t)]``; ``x_t`` in {0, 1}."""

    def __init__(self, table: np.ndarray, actions=ACTIONS):
        self.table = np.asarray(table, dtype=float)
        self.actions = tuple(actions)
        self.deterministic = bool(np.all((self.table == 0) | (self.table == 1)))

    def action_set(self, t):
        return self.actions

    def probs(self, t, x_hist, a_hist):
        x = x_hist[:, -1, 0].astype(np.intp)
        prev = action_index(self.actions, a_hist[:, -1])
        return self.table[t - 1, x, prev]


@dataclass(frozen=True, eq=False)
class ToyFixture:
    """Two-step process with binary covariate ``x_t`` and actions ``{-1, +1}``.

    ``p_x1[x1]``; ``transition[x1, idx(a1), x2]``;
    ``rewards[t-1, x_t, idx(a_{t-1}), idx(a_t)]`` (deterministic);
    policy tables are indexed like :class:`TabularPolicy`.
    """

    p_x1: np.ndarray
    transition: np.ndarray
    rewards: np.ndarray
    logging_table: np.ndarray
    target_table: np.ndarray
    initial_action: float = 1.0
    actions: tuple = field(default=ACTIONS)

    def __post_init__(self):
        for name in ("p_x1", "transition", "logging_table", "target_table"):
            tab = np.asarray(getattr(self, name), dtype=float)
            if np.any(tab < 0) or not np.allclose(tab.sum(axis=-1), 1.0, atol=1e-14, rtol=0):
                raise ValueError(f"{name} rows must be nonnegative and sum to 1")

    @property
    def logging(self) -> TabularPolicy:
        return TabularPolicy(self.logging_table, self.actions)

    @property
    def target(self) -> TabularPolicy:
        return TabularPolicy(self.target_table, self.actions)


def default_fixture() -> ToyFixture:
    logging = np.array(
        [
            [[[0.7, 0.3], [0.4, 0.6]], [[0.25, 0.75], [0.5, 0.5]]],
            [[[0.6, 0.4], [0.2, 0.8]], [[0.35, 0.65], [0.55, 0.45]]],
        ]
    )
    target = np.array(
        [
            [[[0.0, 1.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]]],
            [[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [0.0, 1.0]]],
        ]
    )
    rewards = np.array(
        [
            [[[1.0, -0.5], [2.0, 0.25]], [[-1.5, 3.0], [0.5, -2.0]]],
            [[[0.75, 1.25], [-1.0, 2.5]], [[4.0, -3.0], [1.5, 0.125]]],
        ]
    )
    return ToyFixture(
        p_x1=np.array([0.375, 0.625]),
        transition=np.array([[[0.8, 0.2], [0.3, 0.7]], [[0.45, 0.55], [0.1, 0.9]]]),
        rewards=rewards,
        logging_table=logging,
        target_table=target,
    )


def enumerate_fixture(fx: ToyFixture, policy: Policy):
    """Every positive-probability trajectory under ``policy``.

    Yields ``(x1, a1, x2, a2, probability, (r1, r2))`` with covariates in
    {0, 1} and action labels from ``fx.actions``.
    """
    acts = fx.actions
    a0 = fx.initial_action
    for x1, k1, x2, k2 in itertools.product((0, 1), (0, 1), (0, 1), (0, 1)):
        p1 = policy.probs(1, np.array([[[x1]]], float), np.array([[a0]]))[0, k1]
        p2 = policy.probs(2, np.array([[[x1], [x2]]], float), np.array([[a0, acts[k1]]]))[0, k2]
        prob = fx.p_x1[x1] * p1 * fx.transition[x1, k1, x2] * p2
        if prob == 0:
            continue
        r1 = fx.rewards[0, x1, acts.index(a0), k1]
        r2 = fx.rewards[1, x2, k1, k2]
        yield x1, acts[k1], x2, acts[k2], float(prob), (float(r1), float(r2))


def enumerate_fixture_value(fx: ToyFixture, policy: Policy) -> float:
    """Exact expected cumulative reward of ``policy`` by full enumeration."""
    return float(sum(p * (r[0] + r[1]) for *_, p, r in enumerate_fixture(fx, policy)))


def fixture_step_values(fx: ToyFixture, policy: Policy) -> tuple[float, float]:
    """Exact ``(V_1, V_2)`` by forward propagation of per-step marginals."""
    acts = fx.actions
    k0 = acts.index(fx.initial_action)
    tab = np.stack([policy.probs(t, *_grid_history(t, fx)) .reshape(2, 2, 2) for t in (1, 2)])
    # joint of (x1, a1)
    m1 = fx.p_x1[:, None] * tab[0, :, k0, :]
    v1 = float(np.sum(m1 * fx.rewards[0, :, k0, :]))
    # joint of (x2, a1, a2), summing x1 out
    m_x2_a1 = np.einsum("xa,xay->ya", m1, fx.transition)
    m2 = m_x2_a1[:, :, None] * tab[1]
    v2 = float(np.sum(m2 * fx.rewards[1]))
    return v1, v2


def _grid_history(t: int, fx: ToyFixture):
    """Histories covering every (x_t, a_{t-1}) cell, laid out as a 2x2 grid."""
    xs, ps = np.meshgrid([0.0, 1.0], fx.actions, indexing="ij")
    n = xs.size
    x_hist = np.zeros((n, t, 1))
    x_hist[:, -1, 0] = xs.ravel()
    a_hist = np.full((n, t), fx.initial_action)
    a_hist[:, -1] = ps.ravel()
    return x_hist, a_hist


def fixture_population(fx: ToyFixture, policy: Policy | None = None) -> Dataset:
    """The exact trajectory distribution under ``policy`` (logging by default) as a Dataset."""
    policy = policy or fx.logging
    rows = list(enumerate_fixture(fx, policy))
    X = np.array([[[r[0]], [r[2]]] for r in rows], dtype=float)
    A = np.array([[r[1], r[3]] for r in rows])
    R = np.array([r[5] for r in rows])
    p = np.array([r[4] for r in rows])
    return Dataset.from_arrays(X, A, R, fx.actions, fx.initial_action, probabilities=p)


class ExactFixtureModel:
    """Correctly specified outcome model for the toy fixture."""

    def __init__(self, fx: ToyFixture):
        self.fx = fx
        self.fitted = False

    def fit(self, dataset: Dataset) -> "ExactFixtureModel":
        self.fitted = True
        return self

    def predict(self, t: int, x_hist: np.ndarray, a_hist: np.ndarray) -> np.ndarray:
        x = x_hist[:, -1, 0].astype(np.intp)
        prev = action_index(self.fx.actions, a_hist[:, -2])
        cur = action_index(self.fx.actions, a_hist[:, -1])
        return self.fx.rewards[t - 1, x, prev, cur]

    def plug_in_value(self, t: int, dataset: Dataset, target: Policy) -> float:
        return fixture_step_values(self.fx, target)[t - 1]


# --------------------------------------------------------------------------
# Low-overlap single-step instance (qualitative check of discarded data).


def sample_itr_low_overlap(n: int = 100, n_actions: int = 5, seed: int = 0, tilt: float = 1.5):
    """Single-step data where logging rarely takes the target's action.

    Contexts are ``N(0, I_2)``.  The target picks ``argmax_k x . theta_k`` for
    unit vectors ``theta_k`` spread around the circle; logging is a softmax
    of ``-tilt * x . theta_k``, so it avoids the target's choice.  Rewards
    are ``x . theta_a`` plus unit noise.

    Returns ``(dataset, logging, target)``.
    """
    from .trajectories import FunctionPolicy

    rng = np.random.default_rng(seed)
    ang = 2 * np.pi * np.arange(n_actions) / n_actions
    theta = np.column_stack([np.cos(ang), np.sin(ang)])
    actions = tuple(float(k) for k in range(n_actions))

    def log_probs(t, x_hist, a_hist):
        s = -tilt * x_hist[:, -1, :] @ theta.T
        e = np.exp(s - s.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def tgt_probs(t, x_hist, a_hist):
        k = np.argmax(x_hist[:, -1, :] @ theta.T, axis=1)
        return np.eye(n_actions)[k]

    logging = FunctionPolicy(log_probs, actions, name="low_overlap_logging")
    target = FunctionPolicy(tgt_probs, actions, deterministic=True, name="low_overlap_target")
    X = rng.standard_normal((n, 1, 2))
    p = log_probs(1, X, None)
    a = (rng.random(n)[:, None] > np.cumsum(p, axis=1)).sum(axis=1)
    a = np.minimum(a, n_actions - 1)
    R = np.einsum("nd,nd->n", X[:, 0], theta[a]) + rng.standard_normal(n)
    ds = Dataset.from_arrays(X, a[:, None].astype(float), R[:, None], actions)
    return ds, logging, target

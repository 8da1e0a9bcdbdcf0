"""Logged trajectory data and the policy abstraction used by every estimator.

Actions are stored as their domain labels (e.g. -1.0 / +1.0) and mapped to
small integer indices into the per-step action set on demand.  Every
trajectory also carries the pre-period action ``A_0`` so that step-1 rules of
the form ``f(x_1) * A_0`` are defined; it is the first entry of the padded
action history handed to policies.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "Trajectory",
    "Dataset",
    "Violation",
    "ValidationResult",
    "Policy",
    "FunctionPolicy",
    "validate_dataset",
    "policy_mass",
    "read_csv",
    "write_csv",
    "DatasetParseError",
]

MASS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One logged sequence ``(X_t, A_t, R_t)`` for ``t = 1..T``.

    ``covariates`` has shape ``(T, d)``; ``actions`` and ``rewards`` have
    shape ``(T,)``.  ``initial_action`` is ``A_0``.
    """

    covariates: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    initial_action: float = 1.0

    @property
    def horizon(self) -> int:
        return len(self.actions)


class Violation(NamedTuple):
    index: int | None
    field: str
    reason: str


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True, eq=False)
class Dataset:
    """A sample of ``n`` trajectories sharing horizon and covariate dimension.

    Parameters
    ----------
    trajectories : sequence of Trajectory
    horizon : int
        ``T``.
    action_sets : sequence of tuples
        Finite action label set for each step ``t = 1..T``.
    covariate_dim : int
        ``d``.
    probabilities : array-like, optional
        Probability mass attached to each trajectory.  ``None`` means the
        empirical distribution (``1/n`` each).  A non-uniform vector is used to
        substitute an exact trajectory distribution for a sample.
    """

    trajectories: tuple[Trajectory, ...]
    horizon: int
    action_sets: tuple[tuple, ...]
    covariate_dim: int
    probabilities: np.ndarray | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        object.__setattr__(
            self, "action_sets", tuple(tuple(s) for s in self.action_sets)
        )
        if self.probabilities is not None:
            object.__setattr__(
                self, "probabilities", np.asarray(self.probabilities, dtype=float)
            )

    @classmethod
    def from_arrays(
        cls,
        covariates: np.ndarray,
        actions: np.ndarray,
        rewards: np.ndarray,
        action_sets: Sequence[tuple] | tuple,
        initial_actions: np.ndarray | float = 1.0,
        probabilities: np.ndarray | None = None,
    ) -> "Dataset":
        """Build a dataset from stacked ``(n, T, d)``, ``(n, T)``, ``(n, T)`` arrays.

        ``action_sets`` may be a single tuple shared by every step.
        """
        X = np.asarray(covariates, dtype=float)
        A = np.asarray(actions, dtype=float)
        R = np.asarray(rewards, dtype=float)
        n, T, d = X.shape
        if A.shape != (n, T) or R.shape != (n, T):
            raise ValueError(
                f"shape mismatch: covariates {X.shape}, actions {A.shape}, rewards {R.shape}"
            )
        a0 = np.broadcast_to(np.asarray(initial_actions, dtype=float), (n,)).copy()
        if action_sets and not isinstance(action_sets[0], (tuple, list)):
            action_sets = [tuple(action_sets)] * T
        trajs = tuple(Trajectory(X[i], A[i], R[i], float(a0[i])) for i in range(n))
        ds = cls(trajs, T, tuple(action_sets), d, probabilities)
        # Trajectory rows are views into these arrays, so pre-populate the cache.
        ds.__dict__["covariates"] = X
        ds.__dict__["actions"] = A
        ds.__dict__["rewards"] = R
        ds.__dict__["initial_actions"] = a0
        return ds

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def n(self) -> int:
        return len(self.trajectories)

    @cached_property
    def covariates(self) -> np.ndarray:
        return np.stack([np.asarray(tr.covariates, dtype=float) for tr in self.trajectories])

    @cached_property
    def actions(self) -> np.ndarray:
        return np.stack([np.asarray(tr.actions, dtype=float) for tr in self.trajectories])

    @cached_property
    def rewards(self) -> np.ndarray:
        return np.stack([np.asarray(tr.rewards, dtype=float) for tr in self.trajectories])

    @cached_property
    def initial_actions(self) -> np.ndarray:
        return np.array([tr.initial_action for tr in self.trajectories], dtype=float)

    @cached_property
    def action_history(self) -> np.ndarray:
        """``(n, T + 1)`` array ``[A_0, A_1, ..., A_T]``."""
        return np.column_stack([self.initial_actions, self.actions])

    @cached_property
    def action_indices(self) -> np.ndarray:
        out = np.empty(self.actions.shape, dtype=np.intp)
        for t, labels in enumerate(self.action_sets):
            out[:, t] = action_index(labels, self.actions[:, t])
        return out

    def history(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Covariate history ``x_{1:t}`` and padded action history ``a_{0:t-1}``."""
        _check_step(t, self.horizon)
        return self.covariates[:, :t, :], self.action_history[:, :t]

    def average(self, values: np.ndarray) -> np.ndarray | float:
        """Mean over trajectories, or the expectation under ``probabilities``."""
        if self.probabilities is None:
            return np.mean(values, axis=0)
        return np.tensordot(self.probabilities, values, axes=(0, 0))

    def with_probabilities(self, probabilities: np.ndarray | None) -> "Dataset":
        ds = Dataset(
            self.trajectories, self.horizon, self.action_sets, self.covariate_dim, probabilities
        )
        for key in ("covariates", "actions", "rewards", "initial_actions"):
            if key in self.__dict__:
                ds.__dict__[key] = self.__dict__[key]
        return ds


def action_index(labels: Sequence, values: np.ndarray) -> np.ndarray:
    """Map action labels to positions in ``labels``; unknown labels raise."""
    values = np.asarray(values)
    out = np.full(values.shape, -1, dtype=np.intp)
    for k, lab in enumerate(labels):
        out[values == lab] = k
    if np.any(out < 0):
        bad = values[out < 0].ravel()[0]
        raise ValueError(f"action {bad!r} not in action set {tuple(labels)}")
    return out


def _check_step(t: int, horizon: int) -> None:
    if not 1 <= t <= horizon:
        raise ValueError(f"step {t} outside horizon 1..{horizon}")


def validate_dataset(dataset: Dataset) -> ValidationResult:
    """Check every trajectory and dataset invariant; never raises."""
    out: list[Violation] = []
    T, d = dataset.horizon, dataset.covariate_dim
    if len(dataset.trajectories) < 1:
        out.append(Violation(None, "trajectories", "dataset is empty"))
    if not isinstance(T, (int, np.integer)) or T < 1:
        out.append(Violation(None, "horizon", f"horizon must be >= 1, got {T!r}"))
        return ValidationResult(tuple(out))
    if len(dataset.action_sets) != T:
        out.append(
            Violation(None, "action_sets", f"expected {T} action sets, got {len(dataset.action_sets)}")
        )
    for t, s in enumerate(dataset.action_sets, start=1):
        if len(s) == 0:
            out.append(Violation(None, "action_sets", f"step {t} action set is empty"))
    if dataset.probabilities is not None:
        p = dataset.probabilities
        if p.shape != (len(dataset.trajectories),):
            out.append(Violation(None, "probabilities", "length differs from number of trajectories"))
        elif np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            out.append(Violation(None, "probabilities", "must be nonnegative and sum to 1"))

    for i, tr in enumerate(dataset.trajectories):
        X = np.asarray(tr.covariates)
        A = np.asarray(tr.actions)
        R = np.asarray(tr.rewards)
        if X.ndim != 2:
            out.append(Violation(i, "covariates", f"expected a (T, d) array, got shape {X.shape}"))
            continue
        steps = X.shape[0]
        if steps != T:
            out.append(Violation(i, "covariates", f"{steps} steps but horizon is {T}"))
        if X.shape[1] != d:
            out.append(Violation(i, "covariates", f"dimension {X.shape[1]} != {d}"))
        if A.shape != (steps,):
            out.append(Violation(i, "actions", f"{A.size} actions for {steps} covariate steps"))
        if R.shape != (steps,):
            out.append(Violation(i, "rewards", f"{R.size} rewards for {steps} covariate steps"))
        if not np.all(np.isfinite(X)):
            out.append(Violation(i, "covariates", "non-finite value"))
        if R.ndim == 1 and not np.all(np.isfinite(R)):
            out.append(Violation(i, "rewards", "non-finite value"))
        for t, a in enumerate(np.ravel(A)[: len(dataset.action_sets)], start=1):
            if a not in dataset.action_sets[t - 1]:
                out.append(
                    Violation(i, "actions", f"step {t}: action {a!r} not in {dataset.action_sets[t - 1]}")
                )
    return ValidationResult(tuple(out))


class Policy:
    """Probability of each step-``t`` action given the observed history.

    Subclasses implement :meth:`probs`, which is vectorized over a batch of
    ``n`` histories: ``x_hist`` has shape ``(n, t, d)`` and ``a_hist`` has
    shape ``(n, t)`` holding ``A_0, ..., A_{t-1}``.  The return value has shape
    ``(n, m)`` with columns ordered as :meth:`action_set`.
    """

    deterministic: bool = False

    def action_set(self, t: int) -> tuple:
        raise NotImplementedError

    def probs(self, t: int, x_hist: np.ndarray, a_hist: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def step_probs(self, dataset: Dataset, t: int) -> np.ndarray:
        """``(n, m)`` masses at step ``t`` for every trajectory of ``dataset``."""
        x_hist, a_hist = dataset.history(t)
        return self.probs(t, x_hist, a_hist)

    def observed_mass(self, dataset: Dataset, t: int) -> np.ndarray:
        """Mass placed on the logged step-``t`` action of each trajectory."""
        p = self.step_probs(dataset, t)
        idx = action_index(self.action_set(t), dataset.actions[:, t - 1])
        return p[np.arange(len(idx)), idx]


class FunctionPolicy(Policy):
    """Policy backed by a vectorized callable ``fn(t, x_hist, a_hist) -> (n, m)``."""

    def __init__(
        self,
        fn: Callable[[int, np.ndarray, np.ndarray], np.ndarray],
        actions: Sequence | Sequence[Sequence],
        deterministic: bool = False,
        name: str | None = None,
    ):
        self._fn = fn
        if actions and isinstance(actions[0], (tuple, list)):
            self._actions = tuple(tuple(a) for a in actions)
            self._shared = False
        else:
            self._actions = tuple(actions)
            self._shared = True
        self.deterministic = deterministic
        self.name = name or getattr(fn, "__name__", "policy")

    def action_set(self, t: int) -> tuple:
        if self._shared:
            return self._actions
        if not 1 <= t <= len(self._actions):
            raise ValueError(f"step {t} outside policy horizon 1..{len(self._actions)}")
        return self._actions[t - 1]

    def probs(self, t, x_hist, a_hist):
        return np.asarray(self._fn(t, x_hist, a_hist), dtype=float)

    def __repr__(self) -> str:
        return f"FunctionPolicy({self.name})"


def policy_mass(
    policy: Policy,
    t: int,
    x_hist: np.ndarray,
    a_hist: np.ndarray,
    a,
    horizon: int | None = None,
) -> float:
    """Probability that ``policy`` picks ``a`` at step ``t`` after one history.

    ``x_hist`` has shape ``(t, d)``; ``a_hist`` holds ``A_0..A_{t-1}`` (length
    ``t``).
    """
    if t < 1 or (horizon is not None and t > horizon):
        raise ValueError(f"step {t} out of range")
    x_hist = np.asarray(x_hist, dtype=float)
    a_hist = np.asarray(a_hist, dtype=float)
    if x_hist.ndim != 2 or x_hist.shape[0] != t:
        raise ValueError(f"covariate history must have {t} rows, got shape {x_hist.shape}")
    if a_hist.shape != (t,):
        raise ValueError(f"action history must have length {t} (A_0..A_{t-1}), got {a_hist.shape}")
    labels = policy.action_set(t)
    if a not in labels:
        raise ValueError(f"action {a!r} not in step-{t} action set {labels}")
    p = policy.probs(t, x_hist[None], a_hist[None])[0]
    return float(p[labels.index(a)])


class DatasetParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


def write_csv(dataset: Dataset, path: str | Path) -> None:
    """Write ``traj_id, t, x_1..x_d, action, reward, a0`` rows sorted by (traj_id, t)."""
    d = dataset.covariate_dim
    header = ["traj_id", "t", *[f"x_{j + 1}" for j in range(d)], "action", "reward", "a0"]
    X, A, R, A0 = dataset.covariates, dataset.actions, dataset.rewards, dataset.initial_actions
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            for t in range(dataset.horizon):
                w.writerow(
                    [i, t + 1, *(repr(float(v)) for v in X[i, t]), _fmt_label(A[i, t]),
                     repr(float(R[i, t])), _fmt_label(A0[i])]
                )


def _fmt_label(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def read_csv(
    path: str | Path,
    action_set: Sequence | None = None,
    default_initial_action: float = 1.0,
) -> Dataset:
    """Parse a dataset CSV; the ``a0`` column is optional.

    ``action_set`` defaults to the sorted set of labels seen in the file,
    shared across steps.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError(path, 1, "missing header row") from None
        header = [h.strip() for h in header]
        if header[:2] != ["traj_id", "t"]:
            raise DatasetParseError(path, 1, "header must start with traj_id,t")
        xcols = [h for h in header if h.startswith("x_")]
        d = len(xcols)
        if d == 0 or xcols != [f"x_{j + 1}" for j in range(d)] or header[2 : 2 + d] != xcols:
            raise DatasetParseError(path, 1, "expected covariate columns x_1..x_d after t")
        rest = header[2 + d :]
        if rest not in (["action", "reward"], ["action", "reward", "a0"]):
            raise DatasetParseError(path, 1, f"unexpected trailing columns {rest}")
        has_a0 = len(rest) == 3

        rows: dict[str, list] = {}
        order: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            try:
                tid = row[0].strip()
                t = int(row[1])
                x = [float(v) for v in row[2 : 2 + d]]
                a = float(row[2 + d])
                r = float(row[3 + d])
                a0 = float(row[4 + d]) if has_a0 else default_initial_action
            except ValueError as exc:
                raise DatasetParseError(path, lineno, str(exc)) from None
            if not order or tid != order[-1]:
                if tid in rows:
                    raise DatasetParseError(path, lineno, f"rows not sorted by traj_id ({tid} seen earlier)")
                rows[tid] = []
                order.append(tid)
            steps = rows[tid]
            if t != len(steps) + 1:
                raise DatasetParseError(path, lineno, f"trajectory {tid}: expected t={len(steps) + 1}, got {t}")
            steps.append((x, a, r, a0, lineno))

    if not order:
        raise DatasetParseError(path, 2, "no data rows")
    T = len(rows[order[0]])
    trajs = []
    for tid in order:
        steps = rows[tid]
        if len(steps) != T:
            raise DatasetParseError(path, steps[-1][4], f"trajectory {tid} has {len(steps)} steps, expected {T}")
        trajs.append(
            Trajectory(
                np.array([s[0] for s in steps]),
                np.array([s[1] for s in steps]),
                np.array([s[2] for s in steps]),
                steps[0][3],
            )
        )
    if action_set is None:
        action_set = tuple(sorted({float(a) for tr in trajs for a in tr.actions}))
    ds = Dataset(tuple(trajs), T, (tuple(action_set),) * T, d)
    res = validate_dataset(ds)
    if not res.ok:
        v = res.violations[0]
        raise DatasetParseError(path, 0, f"trajectory {v.index}: {v.field}: {v.reason}")
    return ds


def iter_steps(dataset: Dataset) -> Iterable[int]:
    return range(1, dataset.horizon + 1)

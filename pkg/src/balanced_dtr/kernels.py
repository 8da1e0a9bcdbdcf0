"""Kernels on (context, action) pairs and Gram assembly for the balance objective.

A point is ``(z, a)`` where ``z`` is a real context vector and ``a`` is the
tuple of the last ``action_lags`` actions ending with the action being
balanced.  Every kernel factorizes as ``[a == a'] * k(z, z')``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.spatial.distance import cdist

from .trajectories import action_index

__all__ = [
    "KernelSpec",
    "GramPair",
    "context_kernel",
    "eval_kernel",
    "build_gram_pair",
    "step_contexts",
    "ITR_KERNEL",
]

Family = Literal["gaussian", "matern52"]
Context = Literal["last_step", "full_covariates"]

_SQRT5 = math.sqrt(5.0)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus how contexts are read off a trajectory prefix.

    ``context="last_step"`` uses ``x_t`` only (the DTR kernel);
    ``"full_covariates"`` concatenates ``x_1..x_t`` (equal to ``X`` when
    ``T = 1``).  ``action_lags`` counts trailing actions matched by the delta
    factor, the balanced action ``a_t`` included.
    """

    family: Family = "gaussian"
    length_scale: float = 1.0
    context: Context = "last_step"
    action_lags: int = 2

    def __post_init__(self):
        if self.family not in ("gaussian", "matern52"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.context not in ("last_step", "full_covariates"):
            raise ValueError(f"unknown context extractor {self.context!r}")
        if not self.length_scale > 0:
            raise ValueError(f"length_scale must be positive, got {self.length_scale}")
        if self.action_lags < 0:
            raise ValueError("action_lags must be nonnegative")


ITR_KERNEL = KernelSpec("gaussian", 1.0, "full_covariates", 1)


def context_kernel(family: str, length_scale: float, Z1: np.ndarray, Z2: np.ndarray) -> np.ndarray:
    """Pure context kernel matrix between the rows of ``Z1`` and ``Z2``."""
    Z1 = np.atleast_2d(np.asarray(Z1, dtype=float))
    Z2 = np.atleast_2d(np.asarray(Z2, dtype=float))
    if Z1.shape[1] != Z2.shape[1]:
        raise ValueError(f"context dimension mismatch: {Z1.shape[1]} vs {Z2.shape[1]}")
    sq = cdist(Z1, Z2, "sqeuclidean")
    if family == "gaussian":
        return np.exp(-sq / length_scale**2)
    if family == "matern52":
        r = np.sqrt(sq) / length_scale
        return (1.0 + _SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-_SQRT5 * r)
    raise ValueError(f"unknown kernel family {family!r}")


def eval_kernel(spec: KernelSpec, p: tuple, q: tuple) -> float:
    """Kernel value between points ``p = (z, actions)`` and ``q``."""
    zp, ap = np.asarray(p[0], dtype=float).ravel(), tuple(np.ravel(p[1]))
    zq, aq = np.asarray(q[0], dtype=float).ravel(), tuple(np.ravel(q[1]))
    if zp.shape != zq.shape:
        raise ValueError(f"context dimension mismatch: {zp.shape} vs {zq.shape}")
    if len(ap) != spec.action_lags or len(aq) != spec.action_lags:
        raise ValueError(f"expected {spec.action_lags} actions per point")
    if ap != aq:
        return 0.0
    return float(context_kernel(spec.family, spec.length_scale, zp[None], zq[None])[0, 0])


def step_contexts(spec: KernelSpec, x_hist: np.ndarray, a_hist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Contexts and matched earlier actions for a batch of step-``t`` histories.

    ``x_hist`` is ``(n, t, d)``; ``a_hist`` is ``(n, t)`` holding ``A_0..A_{t-1}``.
    Returns ``Z`` of shape ``(n, p)`` and ``lags`` of shape ``(n, action_lags - 1)``.
    """
    n, t, _ = x_hist.shape
    if spec.context == "last_step":
        Z = x_hist[:, -1, :]
    else:
        Z = x_hist.reshape(n, -1)
    k = max(spec.action_lags - 1, 0)
    if k > a_hist.shape[1]:
        raise ValueError(
            f"action_lags={spec.action_lags} needs {k} earlier actions but step {t} has {a_hist.shape[1]}"
        )
    lags = a_hist[:, a_hist.shape[1] - k :] if k else np.empty((n, 0))
    return np.ascontiguousarray(Z, dtype=float), np.asarray(lags, dtype=float)


@dataclass(frozen=True, eq=False)
class GramPair:
    """Quadratic-form pieces of the squared dual norm of the bias operator.

    ``Q[i, j] = K((Z_i, A_i), (Z_j, A_j))``;
    ``C[i, j] = sum_a pi(a | Z_j) K((Z_i, A_i), (Z_j, a))`` and ``c = C.sum(1)``;
    ``d = sum_{i, j} sum_{a, a'} pi(a | Z_i) pi(a' | Z_j) K((Z_i, a), (Z_j, a'))``.
    """

    Q: np.ndarray
    C: np.ndarray
    c: np.ndarray
    d: float


def build_gram_pair(
    spec: KernelSpec,
    contexts: np.ndarray,
    lag_actions: np.ndarray,
    observed_actions: np.ndarray,
    target_probs: np.ndarray,
    action_set: tuple,
) -> GramPair:
    """Assemble ``(Q, C, c, d)`` for ``n`` balancing points.

    ``target_probs[j, k]`` is the target mass of ``action_set[k]`` at point
    ``j``.  Because the kernel is a product of a delta on actions and a
    context kernel, all sums over actions reduce to elementwise products.
    """
    Z = np.asarray(contexts, dtype=float)
    A = np.asarray(observed_actions, dtype=float)
    P = np.asarray(target_probs, dtype=float)
    n = Z.shape[0]
    if A.shape != (n,) or P.shape != (n, len(action_set)):
        raise ValueError("contexts, actions and target masses must share length n")
    Kx = context_kernel(spec.family, spec.length_scale, Z, Z)
    if spec.action_lags >= 1:
        L = np.asarray(lag_actions, dtype=float).reshape(n, -1)
        for k in range(L.shape[1]):
            Kx *= L[:, k][:, None] == L[:, k][None, :]
        Q = Kx * (A[:, None] == A[None, :])
        # mass the target puts on each row's observed action, at every column point
        idx = action_index(action_set, A)
        C = Kx * P[:, idx].T
        d = float(np.sum(Kx * (P @ P.T)))
    else:
        # no action matching at all: the kernel ignores actions
        Q = Kx.copy()
        C = Kx.copy()
        d = float(np.sum(Kx))
    return GramPair(Q=Q, C=C, c=C.sum(axis=1), d=d)


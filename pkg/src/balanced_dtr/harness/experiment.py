"""Monte Carlo replications of the reference experiment.

Replication ``r`` at horizon ``T`` samples its dataset with the seed
``replication_seed(master_seed, T, r)``: the first 64-bit word of
``SeedSequence(master_seed, spawn_key=(2, T, r)).generate_state(1, uint64)``.
Every estimator sees the same dataset, and results are gathered in
``(horizon, replication, estimator)`` order, so the number of worker
processes never changes the output.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..estimators import evaluate
from ..simulation import ReferenceLogging, ReferenceTarget, sample_dataset, true_value
from .config import ExperimentConfig

__all__ = [
    "ReplicationRecord",
    "CellSummary",
    "ReplicationSummary",
    "ExperimentResult",
    "replication_seed",
    "run_replication",
    "run_experiment",
    "summarize",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReplicationRecord:
    horizon: int
    replication: int
    estimator: str
    estimate: float
    degenerate: bool
    ess: float
    zero_fraction: float
    error: str | None = None


@dataclass(frozen=True)
class CellSummary:
    rmse: float
    bias: float
    sd: float
    degenerate_fraction: float
    mean_ess: float
    mean_zero_fraction: float
    n_ok: int
    n_failed: int = 0


@dataclass
class ReplicationSummary:
    """Per (horizon, estimator) accuracy against the oracle value."""

    oracle: dict[int, tuple[float, float]] = field(default_factory=dict)
    cells: dict[tuple[int, str], CellSummary] = field(default_factory=dict)

    @property
    def horizons(self) -> list[int]:
        return sorted({h for h, _ in self.cells})

    @property
    def estimators(self) -> list[str]:
        seen: list[str] = []
        for _, e in self.cells:
            if e not in seen:
                seen.append(e)
        return seen

    def cell(self, horizon: int, estimator: str) -> CellSummary:
        return self.cells[(horizon, estimator)]

    def to_dict(self) -> dict:
        return {
            "oracle": {str(h): {"value": v, "se": se} for h, (v, se) in sorted(self.oracle.items())},
            "cells": [
                {"horizon": h, "estimator": e, **vars(c)} for (h, e), c in self.cells.items()
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReplicationSummary":
        oracle = {int(h): (float(v["value"]), float(v["se"])) for h, v in d["oracle"].items()}
        cells = {}
        for c in d["cells"]:
            c = dict(c)
            key = (int(c.pop("horizon")), c.pop("estimator"))
            cells[key] = CellSummary(**c)
        return cls(oracle, cells)


@dataclass
class ExperimentResult:
    summary: ReplicationSummary
    records: list[ReplicationRecord]

    def estimates(self, horizon: int, estimator: str) -> np.ndarray:
        return np.array(
            [r.estimate for r in self.records if r.horizon == horizon and r.estimator == estimator]
        )


def summarize(estimates: Sequence[float], truth: float) -> tuple[float, float, float]:
    """``(RMSE, Bias, SD)`` of ``estimates`` against ``truth``; SD divides by the count."""
    x = np.asarray(estimates, dtype=float)
    if x.size == 0:
        raise ValueError("summarize needs at least one estimate")
    err = x - truth
    bias = float(np.mean(err))
    sd = float(np.sqrt(np.mean((x - np.mean(x)) ** 2)))
    rmse = float(np.sqrt(np.mean(err * err)))
    return rmse, bias, sd


def replication_seed(master_seed: int, horizon: int, replication: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(2, horizon, replication))
    return int(ss.generate_state(1, np.uint64)[0])


def run_replication(cfg: ExperimentConfig, horizon: int, replication: int) -> list[ReplicationRecord]:
    """Evaluate every configured estimator on one simulated dataset."""
    dgp = cfg.dgp.replace(horizon=horizon)
    ds = sample_dataset(dgp, replication_seed(cfg.master_seed, horizon, replication))
    logging_policy = ReferenceLogging(dgp.logging_slope)
    target = ReferenceTarget()
    out = []
    for spec in cfg.estimators:
        try:
            res = evaluate(spec, ds, logging_policy, target)
        except Exception as exc:  # recorded per replication, the run continues
            log.warning("T=%d r=%d %s failed: %s", horizon, replication, spec.label, exc)
            out.append(
                ReplicationRecord(horizon, replication, spec.label, math.nan, False, math.nan, math.nan,
                                  f"{type(exc).__name__}: {exc}")
            )
            continue
        fw = res.final_weights
        out.append(
            ReplicationRecord(horizon, replication, spec.label, res.value, res.degenerate, fw.ess, fw.zero_fraction)
        )
    return out


def _task(args):
    cfg, horizon, r = args
    return run_replication(cfg, horizon, r)


def run_experiment(
    cfg: ExperimentConfig,
    workers: int | None = None,
    truths: dict[int, tuple[float, float]] | None = None,
    progress: bool = False,
) -> ExperimentResult:
    """Run all replications and summarize against the oracle value.

    ``truths`` can supply precomputed ``(value, se)`` per horizon.
    """
    workers = cfg.workers if workers is None else workers
    tasks = [(cfg, h, r) for h in cfg.horizons for r in range(cfg.replications)]
    records: list[ReplicationRecord] = []

    def consume(results: Iterable[list[ReplicationRecord]]):
        for k, recs in enumerate(results, start=1):
            records.extend(recs)
            if progress and k % 50 == 0:
                log.info("finished %d / %d replications", k, len(tasks))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            consume(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    else:
        consume(map(_task, tasks))

    oracle = {}
    for h in cfg.horizons:
        if truths and h in truths:
            oracle[h] = truths[h]
        else:
            oracle[h] = true_value(cfg.dgp.replace(horizon=h), cfg.oracle.n_rollouts, cfg.oracle.seed)
    return ExperimentResult(summarize_records(records, oracle, cfg), records)


def summarize_records(
    records: Sequence[ReplicationRecord],
    oracle: dict[int, tuple[float, float]],
    cfg: ExperimentConfig,
) -> ReplicationSummary:
    summary = ReplicationSummary(oracle=dict(oracle))
    for spec in cfg.estimators:
        for h in cfg.horizons:
            rows = [r for r in records if r.horizon == h and r.estimator == spec.label]
            ok = [r for r in rows if r.error is None and math.isfinite(r.estimate)]
            failed = len(rows) - len(ok)
            if ok:
                rmse, bias, sd = summarize([r.estimate for r in ok], oracle[h][0])
                cell = CellSummary(
                    rmse, bias, sd,
                    float(np.mean([r.degenerate for r in ok])),
                    float(np.mean([r.ess for r in ok])),
                    float(np.mean([r.zero_fraction for r in ok])),
                    len(ok), failed,
                )
            else:
                cell = CellSummary(*(math.nan,) * 6, 0, failed)
            summary.cells[(h, spec.label)] = cell
    return summary

"""Experiment configuration and its YAML file format.

Schema (every key optional unless noted; unknown keys are rejected)::

    dgp:
      n: 800                      # trajectories per replication
      covariate_dim: 2
      action_gain: 5.0
      reward_covariate: 0         # 0-based index of the covariate in R_t
      logging_slope: 2.0
      initial_action: random      # random | 1 | -1
    horizons: [3, 5, 7]
    replications: 2000
    master_seed: 20190601
    oracle:
      n_rollouts: 1000000
      seed: 1
    estimators:                   # at least one
      - kind: nipw                # ipw | ipw_T | nipw | nipw_T | balanced | balanced_dr
      - kind: balanced
        name: bal_G               # optional label
        lambda: 1.0
        kernel:
          family: gaussian        # gaussian | matern52
          length_scale: 1.0
          context: last_step      # last_step | full_covariates
          action_lags: 2
    output_dir: results
    workers: 1
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from ..estimators import KINDS, EstimatorSpec
from ..kernels import KernelSpec
from ..simulation import DgpConfig

__all__ = ["ConfigError", "OracleConfig", "ExperimentConfig", "load_config", "config_from_dict", "config_to_dict"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OracleConfig:
    n_rollouts: int = 10**6
    seed: int = 1


def default_estimators() -> tuple[EstimatorSpec, ...]:
    return (
        EstimatorSpec("ipw_T"),
        EstimatorSpec("ipw"),
        EstimatorSpec("nipw_T"),
        EstimatorSpec("nipw"),
        EstimatorSpec("balanced", KernelSpec("gaussian")),
        EstimatorSpec("balanced", KernelSpec("matern52")),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    dgp: DgpConfig = field(default_factory=DgpConfig)
    horizons: tuple[int, ...] = (3, 5, 7)
    replications: int = 2000
    estimators: tuple[EstimatorSpec, ...] = field(default_factory=default_estimators)
    master_seed: int = 20190601
    oracle: OracleConfig = field(default_factory=OracleConfig)
    output_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not self.estimators:
            raise ConfigError("at least one estimator is required")
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise ConfigError("horizons must be a nonempty list of positive integers")
        labels = [e.label for e in self.estimators]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"estimator labels must be unique, got {labels}")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")


_DGP_KEYS = {f.name for f in fields(DgpConfig)} - {"horizon"}
_KERNEL_KEYS = {f.name for f in fields(KernelSpec)}


def _kernel(d: dict, where: str) -> KernelSpec:
    _check_keys(d, _KERNEL_KEYS, where)
    try:
        return KernelSpec(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _estimator(d: dict, where: str) -> EstimatorSpec:
    _check_keys(d, {"kind", "name", "lambda", "kernel"}, where)
    if "kind" not in d:
        raise ConfigError(f"{where}: missing 'kind'")
    if d["kind"] not in KINDS:
        raise ConfigError(f"{where}: unknown kind {d['kind']!r}; expected one of {KINDS}")
    kernel = _kernel(d["kernel"], f"{where}.kernel") if "kernel" in d else None
    if kernel is None and d["kind"].startswith("balanced"):
        kernel = KernelSpec()
    try:
        return EstimatorSpec(d["kind"], kernel, float(d.get("lambda", 1.0)), d.get("name"))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(d: dict[str, Any]) -> ExperimentConfig:
    _check_keys(
        d,
        {"dgp", "horizons", "replications", "master_seed", "oracle", "estimators", "output_dir", "workers"},
        "config",
    )
    kw: dict[str, Any] = {}
    if "dgp" in d:
        _check_keys(d["dgp"], _DGP_KEYS, "dgp")
        try:
            kw["dgp"] = DgpConfig(**d["dgp"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"dgp: {exc}") from None
    if "horizons" in d:
        kw["horizons"] = tuple(int(h) for h in d["horizons"])
    for key in ("replications", "master_seed", "workers"):
        if key in d:
            kw[key] = int(d[key])
    if "oracle" in d:
        _check_keys(d["oracle"], {"n_rollouts", "seed"}, "oracle")
        kw["oracle"] = OracleConfig(**{k: int(v) for k, v in d["oracle"].items()})
    if "estimators" in d:
        kw["estimators"] = tuple(_estimator(e, f"estimators[{i}]") for i, e in enumerate(d["estimators"]))
    if d.get("output_dir") is not None:
        kw["output_dir"] = str(d["output_dir"])
    return ExperimentConfig(**kw)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    dgp = {f.name: getattr(cfg.dgp, f.name) for f in fields(DgpConfig) if f.name != "horizon"}
    ests = []
    for e in cfg.estimators:
        item: dict[str, Any] = {"kind": e.kind, "name": e.label}
        if e.kernel is not None:
            item["lambda"] = e.lam
            item["kernel"] = {f.name: getattr(e.kernel, f.name) for f in fields(KernelSpec)}
        ests.append(item)
    return {
        "dgp": dgp,
        "horizons": list(cfg.horizons),
        "replications": cfg.replications,
        "master_seed": cfg.master_seed,
        "oracle": {"n_rollouts": cfg.oracle.n_rollouts, "seed": cfg.oracle.seed},
        "estimators": ests,
        "output_dir": cfg.output_dir,
        "workers": cfg.workers,
    }

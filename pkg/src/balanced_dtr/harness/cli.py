"""Command line interface: ``balanced-dtr {run,simulate,evaluate,oracle}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..estimators import KINDS, EstimatorSpec, evaluate
from ..kernels import KernelSpec
from ..simulation import ReferenceLogging, ReferenceTarget, sample_dataset, true_value
from ..trajectories import Dataset, FunctionPolicy, Policy, read_csv, write_csv
from .config import ConfigError, ExperimentConfig, load_config
from .experiment import run_experiment
from .reports import format_table, write_reports

log = logging.getLogger("balanced_dtr")

TARGETS = ("reference", "always_plus", "always_minus", "uniform")
LOGGERS = ("reference", "uniform")


def _constant(dataset: Dataset, label: float) -> Policy:
    def fn(t, x_hist, a_hist):
        acts = dataset.action_sets[t - 1]
        out = np.zeros((len(x_hist), len(acts)))
        out[:, acts.index(label)] = 1.0
        return out

    return FunctionPolicy(fn, dataset.action_sets, deterministic=True, name=f"always_{label:+g}")


def _uniform(dataset: Dataset) -> Policy:
    def fn(t, x_hist, a_hist):
        m = len(dataset.action_sets[t - 1])
        return np.full((len(x_hist), m), 1.0 / m)

    return FunctionPolicy(fn, dataset.action_sets, name="uniform")


def named_policy(name: str, dataset: Dataset, slope: float = 2.0) -> Policy:
    """Built-in policies usable from the command line."""
    if name == "reference":
        return ReferenceTarget()
    if name == "reference_logging":
        return ReferenceLogging(slope)
    if name == "always_plus":
        return _constant(dataset, 1.0)
    if name == "always_minus":
        return _constant(dataset, -1.0)
    if name == "uniform":
        return _uniform(dataset)
    raise ValueError(f"unknown policy {name!r}")


def _estimators(arg: str | None, kernel: str | None, lam: float | None) -> tuple[EstimatorSpec, ...] | None:
    if arg is None and kernel is None and lam is None:
        return None
    kinds = [k.strip() for k in (arg or "ipw_T,ipw,nipw_T,nipw,balanced").split(",") if k.strip()]
    out = []
    for k in kinds:
        if k not in KINDS:
            raise ValueError(f"unknown estimator {k!r}; choose from {', '.join(KINDS)}")
        if k.startswith("balanced"):
            families = [kernel] if kernel else ["gaussian", "matern52"]
            out += [EstimatorSpec(k, KernelSpec(f), 1.0 if lam is None else lam) for f in families]
        else:
            out.append(EstimatorSpec(k))
    return tuple(out)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    dgp = cfg.dgp if args.n is None else cfg.dgp.replace(n=args.n)
    return cfg.with_overrides(
        dgp=dgp,
        horizons=None if args.horizon is None else tuple(args.horizon),
        replications=args.replications,
        master_seed=args.seed,
        estimators=_estimators(args.estimators, args.kernel, args.lam),
        output_dir=args.out,
        workers=args.workers,
    )


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.oracle_rollouts is not None:
        cfg = replace(cfg, oracle=replace(cfg.oracle, n_rollouts=args.oracle_rollouts))
    result = run_experiment(cfg, progress=True)
    print(format_table(result.summary))
    out = cfg.output_dir or "results"
    paths = write_reports(result.summary, result.records, out)
    for p in paths.values():
        print(f"wrote {p}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    horizon = cfg.horizons[0] if args.horizon else cfg.dgp.horizon
    dgp = cfg.dgp.replace(horizon=horizon)
    ds = sample_dataset(dgp, cfg.master_seed)
    out = Path(args.out or "dataset.csv")
    if out.suffix != ".csv":
        out = out / "dataset.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out)
    print(f"wrote {ds.n} trajectories of horizon {ds.horizon} to {out}")
    return 0


def cmd_evaluate(args) -> int:
    ds = read_csv(args.data)
    target = named_policy(args.target, ds)
    logging_policy = named_policy("reference_logging" if args.logging == "reference" else args.logging, ds, args.slope)
    specs = _estimators(args.estimators, args.kernel, args.lam) or _estimators("ipw_T,ipw,nipw_T,nipw,balanced", None, None)
    for spec in specs:
        try:
            res = evaluate(spec, ds, logging_policy, target)
        except Exception as exc:
            print(f"{spec.label:<12} failed: {exc}")
            continue
        steps = " ".join(f"{v:.4f}" for v in res.per_step_values)
        flag = "  (degenerate)" if res.degenerate else ""
        print(f"{spec.label:<12} {res.value: .6f}   per-step: {steps}   ess={res.final_weights.ess:.1f}{flag}")
    return 0


def cmd_oracle(args) -> int:
    cfg = _config(args)
    n = args.oracle_rollouts or cfg.oracle.n_rollouts
    seed = cfg.oracle.seed if args.seed is None else args.seed
    for h in cfg.horizons:
        v, se = true_value(cfg.dgp.replace(horizon=h), n, seed)
        print(f"T={h}: {v:.6f} ± {se:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="balanced-dtr", description="Balanced off-policy evaluation of treatment regimes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, horizon_many=True):
        sp.add_argument("--config", help="YAML experiment config")
        if horizon_many:
            sp.add_argument("--horizon", type=int, nargs="+", help="horizon(s) T")
        else:
            sp.add_argument("--horizon", type=int, nargs=1)
        sp.add_argument("--n", type=int, help="trajectories per dataset")
        sp.add_argument("--replications", type=int)
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--estimators", help=f"comma separated subset of {','.join(KINDS)}")
        sp.add_argument("--kernel", choices=("gaussian", "matern52"))
        sp.add_argument("--lambda", dest="lam", type=float)
        sp.add_argument("--out", help="output directory (run) or CSV path (simulate)")
        sp.add_argument("--workers", type=int)

    run = sub.add_parser("run", help="run the Monte Carlo experiment")
    common(run)
    run.add_argument("--oracle-rollouts", type=int)
    run.set_defaults(func=cmd_run)

    sim = sub.add_parser("simulate", help="write one simulated dataset as CSV")
    common(sim, horizon_many=False)
    sim.set_defaults(func=cmd_simulate)

    ev = sub.add_parser("evaluate", help="estimate a built-in target policy on a dataset CSV")
    ev.add_argument("data", help="dataset CSV")
    ev.add_argument("--target", choices=TARGETS, default="reference")
    ev.add_argument("--logging", choices=LOGGERS, default="reference", help="logging policy for the IPW family")
    ev.add_argument("--slope", type=float, default=2.0, help="slope of the reference logging policy")
    ev.add_argument("--estimators")
    ev.add_argument("--kernel", choices=("gaussian", "matern52"))
    ev.add_argument("--lambda", dest="lam", type=float)
    ev.set_defaults(func=cmd_evaluate)

    orc = sub.add_parser("oracle", help="Monte Carlo value of the reference target policy")
    common(orc)
    orc.add_argument("--oracle-rollouts", type=int)
    orc.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"balanced-dtr: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

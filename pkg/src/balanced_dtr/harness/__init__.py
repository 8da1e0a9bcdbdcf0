"""Monte Carlo experiment harness: configuration, replications, reports and CLI."""
from .config import ConfigError, ExperimentConfig, OracleConfig, config_from_dict, config_to_dict, load_config
from .experiment import (
    CellSummary,
    ExperimentResult,
    ReplicationRecord,
    ReplicationSummary,
    replication_seed,
    run_experiment,
    run_replication,
    summarize,
)
from .reports import ReportError, read_replications_csv, read_summary_csv, write_reports

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "OracleConfig",
    "config_from_dict",
    "config_to_dict",
    "load_config",
    "CellSummary",
    "ExperimentResult",
    "ReplicationRecord",
    "ReplicationSummary",
    "replication_seed",
    "run_experiment",
    "run_replication",
    "summarize",
    "ReportError",
    "read_replications_csv",
    "read_summary_csv",
    "write_reports",
]

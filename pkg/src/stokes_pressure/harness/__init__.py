"""CLI harness: configuration, experiment drivers and CSV reporting."""

from .cli import main
from .config import ConfigError, ExperimentConfig, ForcingSpec, load, loads
from .experiments import DEFAULT_TOLERANCES, run_experiment
from .report import HEADER, ReportRow, read_csv, render, write_csv

__all__ = [
    "ConfigError",
    "DEFAULT_TOLERANCES",
    "ExperimentConfig",
    "ForcingSpec",
    "HEADER",
    "ReportRow",
    "load",
    "loads",
    "main",
    "read_csv",
    "render",
    "run_experiment",
    "write_csv",
]

"""Experiment harness: configuration, scenarios, metrics and checkpoints."""

from .config import SCENARIOS, SCHEMA, ConfigError, ExperimentConfig, default_config_text, load_config, parse_config
from .io import load_checkpoint, save_checkpoint
from .metrics import HEADER, MetricsRow, emit_metrics, format_value, metrics_csv, read_metrics
from .scenarios import (
    OutputDirError,
    declared_files,
    read_manifest,
    run_eval,
    run_experiment,
    write_manifest,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "HEADER",
    "MetricsRow",
    "OutputDirError",
    "SCENARIOS",
    "SCHEMA",
    "declared_files",
    "default_config_text",
    "emit_metrics",
    "format_value",
    "load_checkpoint",
    "load_config",
    "metrics_csv",
    "parse_config",
    "read_manifest",
    "read_metrics",
    "run_eval",
    "run_experiment",
    "save_checkpoint",
    "write_manifest",
]

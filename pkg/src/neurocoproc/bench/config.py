"""Experiment configuration: sectioned key = value files with typed values.

Every section and key must appear in :data:`SCHEMA`; anything else is
rejected before a run starts. Values are Python literals (numbers, lists,
``true``/``false``); keys whose default is a string take the raw text.
"""

from __future__ import annotations

import ast
import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

OUTPUT_ENV = "NEUROCOPROC_OUTPUT_DIR"

SCENARIOS = (
    "codec_bench",
    "encode_demo",
    "plasticity_demo",
    "emulator",
    "ncp",
    "coadapt",
    "full_pipeline",
)

SCHEMA: dict[str, dict[str, Any]] = {
    "experiment": {
        "scenario": "full_pipeline",
        "seeds": [0],
        "output_dir": "runs/default",
    },
    "brain": {
        "n_a": 16,
        "n_b": 16,
        "intent_gain": 15.0,
        "pathway_gain": 1.0,
        "recurrent_gain": 0.3,
        "readout_gain": 0.3,
        "bias_a": 10.0,
        "bias_b": 10.0,
        "dt_ms": 10.0,
        "tau_ms": 50.0,
        "noise_std": 2.0,
        "obs_noise_std": 0.5,
        "stim_coupling": 5.0,
        "rate_max": 100.0,
        "activation": "rectify",
        "intent_max": 1.0,
        "lesion_fraction": 0.8,
    },
    "codec": {
        "n_train": 2000,
        "n_test": 20000,
        "separation_sigma": 4.0,
        "n_classes": 6,
        "kalman_systems": 20,
        "kalman_steps": 5,
        "signal_seconds": 4.0,
        "fs_hz": 1000.0,
        "window_ms": 500.0,
        "drop_ratio": 0.5,
    },
    "encode": {
        "duration_ms": 1000.0,
        "session_ms": 10000.0,
        "blank_ms": 10.0,
        "record_ms": 50.0,
        "stim_ms": 50.0,
    },
    "plasticity": {
        "source_unit": 0,
        "target_offset_deg": 90.0,
        "target_width": 1,
        "delay_ms": 7.5,
        "session_bins": 12000,
        "stim_bins": 3,
        "stim_amplitude": 20.0,
        "eta": 4e-7,
        "lambda_decay": 0.0,
        "w_clip": 1.0,
        "burst_rate_hz": 0.25,
        "burst_bins": 5,
        "burst_amplitude": 120.0,
    },
    "emulator": {
        "s_max": 5.0,
        "hold_bins": 10,
        "n_trials": 400,
        "trial_bins": 50,
        "hidden": 32,
        "epochs": 50,
        "step_size": 3e-3,
        "batch_size": 64,
        "validation_fraction": 0.2,
    },
    "ncp": {
        "hidden": 32,
        "sessions": 60,
        "trials_per_session": 16,
        "steps_per_session": 5,
        "step_size": 3e-3,
        "alpha": 1.0,
        "beta": 0.1,
        "gamma": 1e-3,
        "eval_directions": 8,
        "target_radius": 1.0,
        "task_duration_ms": 500.0,
        "success_radius": 0.2,
    },
    "coadapt": {
        "sessions": 20,
        "eta": 5e-8,
        "lambda_decay": 1e-5,
        "w_clip": 1.0,
    },
}

REQUIRED_BLOCKS = {
    "codec_bench": ("experiment", "codec"),
    "encode_demo": ("experiment", "encode"),
    "plasticity_demo": ("experiment", "brain", "plasticity"),
    "emulator": ("experiment", "brain", "emulator"),
    "ncp": ("experiment", "brain", "emulator", "ncp"),
    "coadapt": ("experiment", "brain", "emulator", "ncp", "coadapt"),
    "full_pipeline": ("experiment", "codec", "encode", "brain", "plasticity", "emulator", "ncp", "coadapt"),
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    seeds: tuple
    output_dir: Path
    blocks: dict = field(default_factory=dict)

    def block(self, name: str) -> dict:
        if name not in self.blocks:
            raise ConfigError(f"scenario {self.scenario} needs a [{name}] block")
        return self.blocks[name]

    def with_scenario(self, scenario: str) -> "ExperimentConfig":
        _check_blocks(scenario, self.blocks)
        return ExperimentConfig(scenario, self.seeds, self.output_dir, self.blocks)


def _coerce(section: str, key: str, raw: str, default: Any) -> Any:
    where = f"[{section}] {key}"
    text = raw.strip()
    if isinstance(default, str):
        if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
            text = text[1:-1]
        return text
    low = text.lower()
    if low in ("true", "false"):
        value: Any = low == "true"
    else:
        try:
            value = ast.literal_eval(text)
        except (ValueError, SyntaxError):
            raise ConfigError(f"{where}: cannot parse value {raw!r}") from None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {raw!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {raw!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {raw!r}")
        return float(value)
    if isinstance(default, list):
        if isinstance(value, int) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, (list, tuple)) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"{where}: expected a list of integers, got {raw!r}")
        return list(value)
    raise ConfigError(f"{where}: unsupported type")  # pragma: no cover


def _check_blocks(scenario: str, blocks: dict) -> None:
    if scenario not in SCENARIOS:
        raise ConfigError(f"[experiment] scenario: unknown scenario {scenario!r}; choose from {SCENARIOS}")
    missing = [b for b in REQUIRED_BLOCKS[scenario] if b not in blocks]
    if missing:
        raise ConfigError(f"scenario {scenario} requires block(s) {', '.join('[' + m + ']' for m in missing)}")


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, strict=True, default_section="\x00none")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    blocks: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown block [{section}]; known blocks: {', '.join(SCHEMA)}")
        schema = SCHEMA[section]
        values = {k: (list(v) if isinstance(v, list) else v) for k, v in schema.items()}
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = _coerce(section, key, raw, schema[key])
        blocks[section] = values
    if "experiment" not in blocks:
        raise ConfigError("missing [experiment] block")
    exp = blocks["experiment"]
    _check_blocks(exp["scenario"], blocks)
    seeds = tuple(exp["seeds"])
    if not seeds or len(set(seeds)) != len(seeds) or min(seeds) < 0:
        raise ConfigError("[experiment] seeds: need a non-empty list of distinct non-negative integers")
    out = os.environ.get(OUTPUT_ENV) or exp["output_dir"]
    return ExperimentConfig(exp["scenario"], seeds, Path(out), blocks)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config(text, str(p))


def default_config_text(scenario: str = "full_pipeline", seeds=(0,), output_dir: str = "runs/default") -> str:
    """Config file text containing every block with default values."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, default in keys.items():
            if section == "experiment" and key == "scenario":
                value = scenario
            elif section == "experiment" and key == "seeds":
                value = repr(list(seeds))
            elif section == "experiment" and key == "output_dir":
                value = output_dir
            elif isinstance(default, bool):
                value = "true" if default else "false"
            else:
                value = default if isinstance(default, str) else repr(default)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)

"""Scenario execution: per-seed stages, output files, metrics and manifest."""

from __future__ import annotations

import csv
import hashlib
import io
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Optional, Union

import numpy as np

from ..brainsim import BrainConfig
from ..coproc import CoprocModel, EvalMetrics
from ..diffnet import NetParams
from ..stimcode import REWARDED, UNREWARDED
from . import pipeline as pl
from .config import ExperimentConfig, SCHEMA
from .io import load_checkpoint, save_checkpoint
from .metrics import MetricsRow, format_value, metrics_csv

MANIFEST = "manifest.csv"
METRICS = "metrics.csv"
SUMMARY = "summary.txt"
RESOLVED_CONFIG = "resolved_config.ini"
TOP_LEVEL = (METRICS, SUMMARY, RESOLVED_CONFIG)

# Files each scenario writes into seed_<s>/.
SEED_FILES = {
    "codec_bench": ("trigger_power.csv",),
    "encode_demo": (
        "pulses_rewarded.csv",
        "pulses_unrewarded.csv",
        "pulses_continuous.csv",
        "pulses_session.csv",
        "schedule.csv",
        "fes.csv",
    ),
    "plasticity_demo": ("conditioning.csv",),
    "emulator": ("emulator.ckpt", "emulator_history.csv"),
    "ncp": ("emulator.ckpt", "emulator_history.csv", "model.ckpt", "ncp_history.csv", "eval_trials.csv"),
    "coadapt": (
        "emulator.ckpt",
        "emulator_history.csv",
        "model.ckpt",
        "ncp_history.csv",
        "eval_trials.csv",
        "coadapt_weights.ckpt",
    ),
}
SEED_FILES["full_pipeline"] = tuple(
    dict.fromkeys(
        SEED_FILES["codec_bench"] + SEED_FILES["encode_demo"] + SEED_FILES["plasticity_demo"] + SEED_FILES["coadapt"]
    )
)


class OutputDirError(RuntimeError):
    """The output directory holds files this run would not account for."""


def declared_files(scenario: str, seeds: Iterable[int]) -> list[str]:
    """Relative paths a run lists in its manifest, in sorted order."""
    files = list(TOP_LEVEL)
    for s in seeds:
        files += [f"seed_{s}/{name}" for name in SEED_FILES[scenario]]
    return sorted(files)


def _csv(header: tuple, rows: Iterable[tuple]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


class _SeedRun:
    """Collects one seed's metric rows and writes its files."""

    def __init__(self, scenario: str, seed: int, seed_dir: Path):
        self.scenario = scenario
        self.seed = seed
        self.dir = seed_dir
        self.rows: list[MetricsRow] = []
        self.cfg: Optional[BrainConfig] = None
        self.en: Optional[NetParams] = None
        self.model: Optional[CoprocModel] = None

    def metric(self, condition: str, metric: str, value: float, units: str) -> None:
        self.rows.append(MetricsRow(self.scenario, self.seed, condition, metric, float(value), units))

    def write(self, name: str, text: str) -> None:
        (self.dir / name).write_text(text)


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------


def _codec(run: _SeedRun, blocks: dict) -> None:
    b = blocks["codec"]
    run.metric("kalman", "max_abs_diff_vs_batch", pl.kalman_oracle_error(run.seed, b["kalman_systems"], b["kalman_steps"]), "1")
    acc = pl.decoder_accuracies(run.seed, b)
    for name, value in sorted(acc.items()):
        decoder, label = name.split("_")
        run.metric(decoder, f"accuracy_{label}", value, "fraction")
    demo = pl.trigger_demo(run.seed, b)
    run.metric("trigger", "drop_ms", demo.drop_ms, "ms")
    run.metric("trigger", "first_trigger_ms", demo.first_trigger_ms, "ms")
    run.metric("trigger", "n_triggers", demo.n_triggers, "count")
    fs = b["fs_hz"]
    res = demo.result
    fired = set(res.triggers.tolist())
    rows = [(float(s * 1000.0 / fs), float(p), int(i in fired)) for i, (s, p) in enumerate(zip(res.window_starts, res.power))]
    run.write("trigger_power.csv", _csv(("window_start_ms", "band_power", "triggered"), rows))


def _encode(run: _SeedRun, blocks: dict) -> None:
    demo = pl.encode_demo(blocks["encode"])
    for name, train, spec in (("rewarded", demo.rewarded, REWARDED), ("unrewarded", demo.unrewarded, UNREWARDED)):
        packets, spacing = pl.packet_structure(train)
        per_packet = len(train) / packets if packets else 0.0
        run.metric(name, "packets", packets, "count")
        run.metric(name, "pulses", len(train), "count")
        run.metric(name, "pulses_per_packet", per_packet, "count")
        run.metric(name, "mean_intra_packet_gap_ms", spacing, "ms")
        run.metric(name, "intra_packet_period_ms", spec.packet_ms / per_packet if per_packet else float("nan"), "ms")
    t = demo.continuous.times()
    run.metric("continuous_50hz", "pulses", len(demo.continuous), "count")
    run.metric("continuous_50hz", "mean_spacing_ms", float(np.mean(np.diff(t))) if t.size > 1 else float("nan"), "ms")
    for rate, flexor, extensor in demo.fes:
        run.metric(f"fes_rate_{rate:g}hz", "flexor_current", flexor, "mA")
        run.metric(f"fes_rate_{rate:g}hz", "extensor_current", extensor, "mA")
    run.metric("session", "schedule_errors", demo.schedule_errors, "count")
    run.metric("session", "blanking_violations", demo.blanking_violations, "count")
    run.metric("session", "pulses", len(demo.session_train), "count")
    run.write("pulses_rewarded.csv", demo.rewarded.to_csv())
    run.write("pulses_unrewarded.csv", demo.unrewarded.to_csv())
    run.write("pulses_continuous.csv", demo.continuous.to_csv())
    run.write("pulses_session.csv", demo.session_train.to_csv())
    run.write("schedule.csv", demo.schedule.to_csv())
    run.write("fes.csv", _csv(("rate_hz", "flexor_ma", "extensor_ma"), demo.fes))


def _plasticity(run: _SeedRun, blocks: dict) -> None:
    triggered, control = pl.conditioning_demo(run.seed, blocks["brain"], blocks["plasticity"])
    rows = []
    for name, rep in (("triggered", triggered), ("shuffled_timing", control)):
        run.metric(name, "cosine_gain", rep.cosine_gain, "1")
        run.metric(name, "stim_events", rep.stim_count, "count")
        for vec in ("pre_direction", "post_direction", "target_direction"):
            v = getattr(rep, vec)
            rows.append((name, vec, float(v[0]), float(v[1])))
    run.metric("triggered_minus_control", "cosine_gain", triggered.cosine_gain - control.cosine_gain, "1")
    run.write("conditioning.csv", _csv(("condition", "vector", "x", "y"), rows))


def _emulator(run: _SeedRun, blocks: dict) -> None:
    res = pl.emulator_stage(run.seed, blocks["brain"], blocks["emulator"])
    run.cfg = res.cfg
    run.en = res.en
    run.metric("emulator", "r2_validation", res.r2_validation, "1")
    run.metric("emulator", "r2_train", res.r2_train, "1")
    run.metric("emulator", "final_train_loss", res.history[-1].train_loss, "au^2")
    run.metric("emulator", "final_validation_loss", res.history[-1].validation_loss, "au^2")
    save_checkpoint(res.en, run.dir / "emulator.ckpt")
    run.write("emulator_history.csv", _csv(("epoch", "train_loss", "validation_loss"), res.history))


def _eval_rows(run: _SeedRun, ev: pl.EvalResult, tasks) -> str:
    rows = []
    for name, m in (("ncp", ev.ncp), ("zero_stim", ev.zero_stim), ("random_stim", ev.random_stim)):
        _eval_metrics(run, name, m)
        for k, task in enumerate(tasks):
            rows.append((name, k, float(task.target_pos[0]), float(task.target_pos[1]), float(m.final_positions[k, 0]), float(m.final_positions[k, 1]), float(m.terminal_distances[k])))
    zero = ev.zero_stim.mean_terminal_distance
    run.metric("ncp_vs_zero_stim", "distance_ratio", ev.ncp.mean_terminal_distance / zero if zero > 0 else float("nan"), "1")
    return _csv(("condition", "task", "target_x", "target_y", "final_x", "final_y", "terminal_distance"), rows)


def _eval_metrics(run: _SeedRun, name: str, m: EvalMetrics) -> None:
    run.metric(name, "mean_terminal_distance", m.mean_terminal_distance, "au")
    run.metric(name, "success_rate", m.success_rate, "fraction")
    run.metric(name, "mean_stim_energy", m.mean_stim_energy, "au")


def _ncp(run: _SeedRun, blocks: dict) -> None:
    ncp_block = blocks["ncp"]
    res = pl.ncp_stage(run.seed, run.cfg, run.en, blocks["emulator"], ncp_block)
    run.model = res.model
    run.metric("emulator", "digest_unchanged_by_ncp_training", float(res.digest_before == res.digest_after), "bool")
    save_checkpoint(res.model, run.dir / "model.ckpt")
    run.write(
        "ncp_history.csv",
        _csv(("session", "emulator_loss", "terminal_distance", "stim_energy"), res.history),
    )
    ev = pl.evaluate(run.seed, run.cfg, res.model, ncp_block)
    run.write("eval_trials.csv", _eval_rows(run, ev, pl.eval_tasks(ncp_block)))


def _coadapt(run: _SeedRun, blocks: dict) -> None:
    w0 = run.cfg.w_ba
    res = pl.coadapt_stage(run.seed, run.cfg, run.model, blocks["ncp"], blocks["coadapt"])
    r = res.report
    run.metric("coadapt", "pre_zero_stim_distance", r.pre_zero_stim_distance, "au")
    run.metric("coadapt", "post_zero_stim_distance", r.post_zero_stim_distance, "au")
    run.metric("coadapt", "improved", float(r.post_zero_stim_distance < r.pre_zero_stim_distance), "bool")
    run.metric("coadapt", "weight_change_norm", r.weight_change_norm, "1")
    run.metric("coadapt", "sessions", r.sessions, "count")
    run.metric("emulator", "digest_unchanged_by_coadaptation", float(res.digest_before == res.digest_after), "bool")
    save_checkpoint({"w_ba_before": w0, "w_ba_after": res.w_ba}, run.dir / "coadapt_weights.ckpt")


STAGES: dict[str, tuple[Callable, ...]] = {
    "codec_bench": (_codec,),
    "encode_demo": (_encode,),
    "plasticity_demo": (_plasticity,),
    "emulator": (_emulator,),
    "ncp": (_emulator, _ncp),
    "coadapt": (_emulator, _ncp, _coadapt),
    "full_pipeline": (_codec, _encode, _plasticity, _emulator, _ncp, _coadapt),
}


# --------------------------------------------------------------------------
# run directory handling
# --------------------------------------------------------------------------


class ManifestEntry(NamedTuple):
    path: str
    sha256: str
    bytes: int


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(output_dir: Union[str, Path]) -> list[ManifestEntry]:
    """List every file under ``output_dir`` (except the manifest) with its digest."""
    root = Path(output_dir)
    entries = []
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.relative_to(root).as_posix() != MANIFEST:
            entries.append(ManifestEntry(p.relative_to(root).as_posix(), _sha256(p), p.stat().st_size))
    entries.sort(key=lambda e: e.path)
    (root / MANIFEST).write_text(_csv(("path", "sha256", "bytes"), entries))
    return entries


def read_manifest(output_dir: Union[str, Path]) -> list[ManifestEntry]:
    with open(Path(output_dir) / MANIFEST, newline="") as fh:
        return [ManifestEntry(r["path"], r["sha256"], int(r["bytes"])) for r in csv.DictReader(fh)]


def _prepare(output_dir: Path, overwrite: bool) -> None:
    if not output_dir.exists():
        output_dir.mkdir(parents=True)
        return
    existing = [p for p in output_dir.rglob("*") if p.is_file()]
    if not existing:
        return
    if not overwrite:
        raise OutputDirError(f"output directory {output_dir} is not empty; pass overwrite to replace a previous run")
    if not (output_dir / MANIFEST).exists():
        raise OutputDirError(f"output directory {output_dir} holds files but no {MANIFEST}; refusing to overwrite")
    listed = {output_dir / e.path for e in read_manifest(output_dir)} | {output_dir / MANIFEST}
    stray = [p for p in existing if p not in listed]
    if stray:
        raise OutputDirError(f"output directory {output_dir} holds unlisted files, e.g. {stray[0]}; refusing to overwrite")
    for p in listed:
        if p.exists():
            p.unlink()


def render_config(config: ExperimentConfig) -> str:
    lines = []
    for section in SCHEMA:
        if section not in config.blocks:
            continue
        lines.append(f"[{section}]")
        for key, value in config.blocks[section].items():
            if section == "experiment" and key == "output_dir":
                continue  # may come from the environment; keeps outputs location-independent
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, str):
                text = value
            else:
                text = repr(value)
            lines.append(f"{key} = {text}")
        lines.append("")
    return "\n".join(lines)


def summary_text(title: str, rows: list[MetricsRow]) -> str:
    lines = [title]
    seed = None
    for r in sorted(rows, key=lambda r: (r.seed, r.condition, r.metric)):
        if r.seed != seed:
            seed = r.seed
            lines.append(f"seed {seed}")
        lines.append(f"  {r.condition:32s} {r.metric:36s} {format_value(r.value):>16s} {r.units}")
    return "\n".join(lines) + "\n"


def run_experiment(config: ExperimentConfig, overwrite: bool = False) -> list[ManifestEntry]:
    """Run the configured scenario for every seed and return the manifest."""
    out = Path(config.output_dir)
    _prepare(out, overwrite)
    rows: list[MetricsRow] = []
    for seed in config.seeds:
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(exist_ok=True)
        run = _SeedRun(config.scenario, seed, seed_dir)
        for stage in STAGES[config.scenario]:
            stage(run, config.blocks)
        rows += run.rows
    (out / METRICS).write_text(metrics_csv(rows))
    (out / SUMMARY).write_text(summary_text(f"scenario {config.scenario}", rows))
    (out / RESOLVED_CONFIG).write_text(render_config(config))
    return write_manifest(out)


EVAL_DIR = "eval"
EVAL_FILES = (METRICS, SUMMARY)


def run_eval(config: ExperimentConfig) -> list[ManifestEntry]:
    """Reload each seed's saved co-processor and evaluate it on the simulated brain.

    Writes ``eval/metrics.csv``, ``eval/summary.txt`` and ``eval/seed_<s>/eval_trials.csv``
    under the run directory and refreshes its manifest.
    """
    out = Path(config.output_dir)
    for name in ("brain", "ncp"):
        config.block(name)
    rows: list[MetricsRow] = []
    for seed in config.seeds:
        ckpt = out / f"seed_{seed}" / "model.ckpt"
        if not ckpt.exists():
            raise FileNotFoundError(f"no trained co-processor at {ckpt}; run train-ncp first")
        model = load_checkpoint(ckpt)
        if not isinstance(model, CoprocModel):
            raise TypeError(f"{ckpt} does not hold a co-processor bundle")
        model.check_frozen()
        seed_dir = out / EVAL_DIR / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        run = _SeedRun("eval", seed, seed_dir)
        cfg = pl.brain_config(config.blocks["brain"], seed)
        ev = pl.evaluate(seed, cfg, model, config.blocks["ncp"])
        run.write("eval_trials.csv", _eval_rows(run, ev, pl.eval_tasks(config.blocks["ncp"])))
        rows += run.rows
    (out / EVAL_DIR / METRICS).write_text(metrics_csv(rows))
    (out / EVAL_DIR / SUMMARY).write_text(summary_text("evaluation of saved co-processors", rows))
    return write_manifest(out)

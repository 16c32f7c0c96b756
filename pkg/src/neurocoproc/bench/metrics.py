"""Metric rows and their canonical CSV form."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, NamedTuple, Union

HEADER = ("scenario", "seed", "condition", "metric", "value", "units")


class MetricsRow(NamedTuple):
    scenario: str
    seed: int
    condition: str
    metric: str
    value: float
    units: str


def format_value(value: float) -> str:
    """Decimal with 12 significant digits."""
    return format(float(value), ".12g")


def metrics_csv(rows: Iterable[MetricsRow]) -> str:
    rows = list(rows)
    seen = set()
    for r in rows:
        key = (r.scenario, r.seed, r.condition, r.metric)
        if key in seen:
            raise ValueError(f"duplicate metric {key}")
        seen.add(key)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for r in sorted(rows, key=lambda r: (r.scenario, r.seed, r.condition, r.metric)):
        writer.writerow([r.scenario, r.seed, r.condition, r.metric, format_value(r.value), r.units])
    return buf.getvalue()


def emit_metrics(rows: Iterable[MetricsRow], path: Union[str, Path]) -> None:
    Path(path).write_text(metrics_csv(rows))


def read_metrics(path: Union[str, Path]) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            MetricsRow(r["scenario"], int(r["seed"]), r["condition"], r["metric"], float(r["value"]), r["units"])
            for r in reader
        ]

"""Plain-text checkpoints of named arrays with an embedded content digest.

Layout::

    neurocoproc-checkpoint 1
    <name> <kind> <rows> <cols>
    <row of values>            (rows lines; scalars and vectors use one line)
    ...
    digest sha256 <hex>

``kind`` is ``scalar``, ``vector`` or ``matrix``. Values are written with
``repr`` so they round-trip exactly. The digest covers every byte before the
digest line. Arrays are written in sorted-name order so equal contents give
equal bytes.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Mapping, Union

import numpy as np

HEADER = "neurocoproc-checkpoint 1"


class CheckpointError(ValueError):
    """Malformed or corrupted checkpoint."""


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def dumps(arrays: Mapping[str, np.ndarray]) -> str:
    lines = [HEADER]
    for name in sorted(arrays):
        if not name or any(c.isspace() for c in name):
            raise CheckpointError(f"array name {name!r} must be non-empty without whitespace")
        arr = np.asarray(arrays[name], dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"array {name} contains non-finite values")
        if arr.ndim == 0:
            lines += [f"{name} scalar 1 1", _fmt([arr.item()])]
        elif arr.ndim == 1:
            lines += [f"{name} vector 1 {arr.size}", _fmt(arr)]
        elif arr.ndim == 2:
            lines.append(f"{name} matrix {arr.shape[0]} {arr.shape[1]}")
            lines += [_fmt(row) for row in arr]
        else:
            raise CheckpointError(f"array {name} has {arr.ndim} dimensions; at most 2 supported")
    body = "\n".join(lines) + "\n"
    return body + f"digest sha256 {hashlib.sha256(body.encode()).hexdigest()}\n"


def digest(arrays: Mapping[str, np.ndarray]) -> str:
    """sha256 hex digest of the serialized arrays."""
    return dumps(arrays).rstrip("\n").rsplit(" ", 1)[1]


def loads(text: str) -> dict[str, np.ndarray]:
    body, sep, last = text.rstrip("\n").rpartition("\n")
    if not sep or not last.startswith("digest sha256 "):
        raise CheckpointError("missing digest line")
    body += "\n"
    expected = last.split()[-1]
    actual = hashlib.sha256(body.encode()).hexdigest()
    if actual != expected:
        raise CheckpointError(f"digest mismatch: file says {expected}, contents hash to {actual}")
    lines = body.splitlines()
    if not lines or lines[0] != HEADER:
        raise CheckpointError("unrecognised header")
    out: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if len(parts) != 4 or parts[1] not in ("scalar", "vector", "matrix"):
            raise CheckpointError(f"line {i + 1}: bad array header {lines[i]!r}")
        name, kind, rows, cols = parts[0], parts[1], int(parts[2]), int(parts[3])
        if name in out:
            raise CheckpointError(f"duplicate array {name}")
        n_lines = rows if kind == "matrix" else 1
        block = lines[i + 1 : i + 1 + n_lines]
        if len(block) != n_lines:
            raise CheckpointError(f"array {name}: truncated")
        try:
            data = [[float(v) for v in row.split()] for row in block]
        except ValueError as exc:
            raise CheckpointError(f"array {name}: {exc}") from None
        if any(len(row) != cols for row in data):
            raise CheckpointError(f"array {name}: expected {cols} values per row")
        arr = np.array(data, dtype=np.float64).reshape(rows, cols)
        if kind == "scalar":
            arr = np.array(arr.item())
        elif kind == "vector":
            arr = arr.reshape(cols)
        out[name] = arr
        i += 1 + n_lines
    return out


def save(path: Union[str, Path], arrays: Mapping[str, np.ndarray]) -> str:
    """Write a checkpoint and return its digest."""
    text = dumps(arrays)
    Path(path).write_text(text)
    return text.rstrip("\n").rsplit(" ", 1)[1]


def load(path: Union[str, Path]) -> dict[str, np.ndarray]:
    return loads(Path(path).read_text())

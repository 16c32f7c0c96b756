"""Checkpoint persistence for networks, co-processor bundles and raw arrays."""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .. import checkpoint
from ..checkpoint import CheckpointError
from ..coproc.model import CoprocConfig, CoprocModel, build_model
from ..diffnet import NetParams, net_from_arrays, net_to_arrays

KIND_PREFIX = "bundle/kind:"
KINDS = ("net", "coproc", "arrays")

Checkpointable = Union[NetParams, CoprocModel, Mapping[str, np.ndarray]]


def to_arrays(value: Checkpointable) -> dict[str, np.ndarray]:
    """Tagged named arrays for any supported value."""
    if isinstance(value, NetParams):
        out = net_to_arrays(value, "net/")
        kind = "net"
    elif isinstance(value, CoprocModel):
        out = value.to_arrays()
        for f in fields(CoprocConfig):
            out[f"config/{f.name}"] = np.array(float(getattr(value.config, f.name)))
        out["bundle/n_stim"] = np.array(float(value.n_stim))
        kind = "coproc"
    elif isinstance(value, Mapping):
        out = {}
        for name, arr in value.items():
            if name.startswith("bundle/"):
                raise CheckpointError(f"array name {name!r} uses the reserved 'bundle/' prefix")
            out[name] = np.asarray(arr, dtype=np.float64)
        kind = "arrays"
    else:
        raise TypeError(f"cannot checkpoint a {type(value).__name__}")
    out[KIND_PREFIX + kind] = np.array(1.0)
    return out


def from_arrays(arrays: Mapping[str, np.ndarray]) -> Checkpointable:
    tags = [k[len(KIND_PREFIX):] for k in arrays if k.startswith(KIND_PREFIX)]
    if len(tags) != 1 or tags[0] not in KINDS:
        raise CheckpointError(f"checkpoint carries no valid kind tag (found {tags})")
    kind = tags[0]
    if kind == "net":
        return net_from_arrays(arrays, "net/")
    if kind == "arrays":
        return {k: v for k, v in arrays.items() if not k.startswith("bundle/")}
    cfg_kwargs = {}
    for f in fields(CoprocConfig):
        key = f"config/{f.name}"
        if key not in arrays:
            raise CheckpointError(f"co-processor checkpoint lacks {key}")
        value = float(arrays[key])
        cfg_kwargs[f.name] = int(value) if f.type in (int, "int") else value
    en = net_from_arrays(arrays, "en/")
    ncp = net_from_arrays(arrays, "ncp/")
    return build_model(en, ncp, int(arrays["bundle/n_stim"]), CoprocConfig(**cfg_kwargs))


def save_checkpoint(value: Checkpointable, path: Union[str, Path]) -> str:
    """Write ``value`` and return the file's content digest."""
    return checkpoint.save(path, to_arrays(value))


def load_checkpoint(path: Union[str, Path]) -> Checkpointable:
    """Read a checkpoint, verifying its digest, and rebuild the stored value."""
    try:
        arrays = checkpoint.load(path)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return from_arrays(arrays)

"""Flat binary checkpoint container.

Layout: a plain-text header, one ``name dim0 dim1 ...`` line per array,
terminated by a blank line, followed by the raw little-endian float64
data of every array in header order.  Round-trips are bit-exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..autodiff import Tensor

_MAGIC = "cogspeech-checkpoint-v1"


class CheckpointError(ValueError):
    pass


def _as_arrays(params) -> dict[str, np.ndarray]:
    out = {}
    for name, value in params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        if arr.dtype != np.float64:
            raise CheckpointError(f"{name}: checkpoints hold float64, got {arr.dtype}")
        if any(ch.isspace() for ch in name) or not name:
            raise CheckpointError(f"invalid parameter name {name!r}")
        out[name] = arr
    return out


def save_checkpoint(path, params) -> None:
    arrays = _as_arrays(params)
    lines = [_MAGIC]
    for name, arr in arrays.items():
        lines.append(" ".join([name] + [str(d) for d in arr.shape]))
    header = ("\n".join(lines) + "\n\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    split_at = raw.find(b"\n\n")
    if split_at < 0:
        raise CheckpointError(f"{path}: missing header terminator")
    header_lines = raw[:split_at].decode("ascii").split("\n")
    if not header_lines or header_lines[0] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body = raw[split_at + 2 :]
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for line in header_lines[1:]:
        fields = line.split(" ")
        name = fields[0]
        shape = tuple(int(d) for d in fields[1:])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(body):
            raise CheckpointError(f"{path}: truncated data for {name!r}")
        arrays[name] = np.frombuffer(
            body, dtype="<f8", count=count, offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} trailing bytes")
    return arrays


def snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """In-memory copy of parameter values."""
    return {name: p.data.copy() for name, p in params.items()}


def restore(params: dict[str, Tensor], arrays: dict[str, np.ndarray]) -> None:
    """Assign saved values back onto parameter tensors, shapes checked."""
    missing = set(params) - set(arrays)
    if missing:
        raise CheckpointError(f"missing arrays for parameters: {sorted(missing)}")
    for name, p in params.items():
        arr = arrays[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"{name}: shape {arr.shape} does not match parameter {p.data.shape}"
            )
        p.data = arr.copy()

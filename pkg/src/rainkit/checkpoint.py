"""Binary tensor checkpoints.

Layout: magic, one version byte, then per tensor
``uint32 name_len | name (utf-8) | int32[4] shape | float32[] data``,
all little-endian, until end of file. Arrays of rank < 4 are stored with
leading unit axes and restored to their original rank by the caller.

Model checkpoints prepend a single text header line (``#`` + JSON + newline)
recording the configuration the weights were built with.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

MAGIC = b"RAINKIT\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_tensors(fh: BinaryIO, tensors: Mapping[str, np.ndarray]) -> None:
    fh.write(MAGIC)
    fh.write(bytes([VERSION]))
    for name, arr in tensors.items():
        if arr.ndim > 4:
            raise CheckpointError(f"{name}: rank {arr.ndim} exceeds 4")
        shape = (1,) * (4 - arr.ndim) + tuple(arr.shape)
        raw = name.encode("utf-8")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<4i", *shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensors(fh: BinaryIO) -> dict[str, np.ndarray]:
    if fh.read(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a rainkit checkpoint (bad magic)")
    version = fh.read(1)
    if not version or version[0] != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version[0] if version else None}")
    out: dict[str, np.ndarray] = {}
    while True:
        head = fh.read(4)
        if not head:
            return out
        if len(head) != 4:
            raise CheckpointError("truncated entry header")
        (n,) = struct.unpack("<I", head)
        name = fh.read(n).decode("utf-8")
        shape = struct.unpack("<4i", fh.read(16))
        count = int(np.prod(shape))
        buf = fh.read(4 * count)
        if len(buf) != 4 * count:
            raise CheckpointError(f"{name}: truncated data")
        out[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        write_tensors(fh, tensors)


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return read_tensors(fh)


def save_with_header(path, header: dict, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(b"#" + json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        write_tensors(fh, tensors)


def load_with_header(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        line = fh.readline()
        if not line.startswith(b"#"):
            raise CheckpointError(f"{Path(path).name}: missing config header line")
        try:
            header = json.loads(line[1:].decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{Path(path).name}: unreadable header ({exc})") from exc
        return header, read_tensors(fh)


def restore(arr: np.ndarray, shape: tuple, name: str = "") -> np.ndarray:
    """Undo the rank padding applied at write time, validating the shape."""
    shape = tuple(shape)
    padded = (1,) * (4 - len(shape)) + shape
    if arr.shape != padded:
        raise CheckpointError(f"{name}: checkpoint shape {arr.shape} does not match {shape}")
    return arr.reshape(shape)


def module_state(module) -> dict[str, np.ndarray]:
    state = {f"param.{n}": p.data for n, p in module.named_parameters()}
    state.update({f"buffer.{n}": b for n, b in module.named_buffers()})
    return state


def load_module_state(module, tensors: Mapping[str, np.ndarray], prefix: str = "") -> None:
    """Copy stored parameters and buffers into ``module``; every entry must be present."""
    for n, p in module.named_parameters():
        key = f"{prefix}param.{n}"
        if key not in tensors:
            raise CheckpointError(f"missing tensor {key}")
        p.data = restore(tensors[key], p.shape, key).astype(p.dtype)
    for n, b in module.named_buffers():
        key = f"{prefix}buffer.{n}"
        if key not in tensors:
            raise CheckpointError(f"missing tensor {key}")
        module.set_buffer(n, restore(tensors[key], b.shape, key))

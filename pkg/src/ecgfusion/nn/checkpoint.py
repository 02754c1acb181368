"""Binary checkpoints: magic, version, JSON config, named float64 arrays."""

from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"HECG"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | os.PathLike, arrays: dict[str, np.ndarray], config: dict) -> None:
    """Layout: ``MAGIC | u32 version | u32 len | config JSON | u32 count | entries``.

    Each entry is ``u32 name_len | name | u32 ndim | u64 dims... | float64 data``
    (little-endian throughout).
    """
    blob = json.dumps(config, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype="<f8")
            key = name.encode()
            fh.write(struct.pack("<I", len(key)))
            fh.write(key)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        out = struct.unpack_from(fmt, data, pos)
        pos += size
        return out

    version, n_cfg = take("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    config = json.loads(data[pos: pos + n_cfg].decode())
    pos += n_cfg
    (count,) = take("<I")
    arrays = {}
    for _ in range(count):
        (n_name,) = take("<I")
        name = data[pos: pos + n_name].decode()
        pos += n_name
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q") if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        if pos + 8 * n > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after last array")
    return arrays, config

"""Binary checkpoint format shared by every trainable model.

Layout (little-endian)::

    b"GVAE"  u32 version  u32 n_entries
    n_entries x ( u32 name_len  name(utf-8)  u32 rank  rank x u64 dim  f64 values )
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GVAE"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads(data: bytes) -> dict:
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic bytes")
    try:
        version, count = struct.unpack_from("<II", data, 4)
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint header") from exc
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", data, off)
            off += 8 * rank
            size = int(np.prod(shape)) if rank else 1
            if off + 8 * size > len(data):
                raise CheckpointError(f"truncated values for {name!r}")
            vals = np.frombuffer(data, dtype="<f8", count=size, offset=off)
            off += 8 * size
            out[name] = vals.reshape(shape).astype(np.float64)
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint") from exc
    if off != len(data):
        raise CheckpointError("trailing bytes after the last entry")
    return out


def save(path, tensors: dict) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path) -> dict:
    return loads(Path(path).read_bytes())

"""Binary checkpoint format.

Layout (little-endian): b"LWPT", u16 version, u32 tensor count, then per
tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims, float64 values.
"""
from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"LWPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: "dict[str, np.ndarray]") -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype=np.float64)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes(order="C"))
    return b"".join(parts)


def loads(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic bytes")
    try:
        version, count = struct.unpack_from("<HI", blob, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 10
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * n > len(blob):
                raise CheckpointError(f"truncated data for tensor {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * n
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last tensor")
    return out


def save(path, tensors: "dict[str, np.ndarray]") -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path) -> "OrderedDict[str, np.ndarray]":
    return loads(Path(path).read_bytes())

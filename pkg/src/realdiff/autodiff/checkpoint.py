"""Flat binary parameter checkpoints.

Layout: magic ``CDEF``, u32 version, then one record per parameter until EOF:
u32 name length, utf-8 name, u32 rank, rank x u32 dims, little-endian f64 payload.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .tensor import Tensor

MAGIC = b"CDEF"
VERSION = 1


def dumps(params: dict[str, Tensor | np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    for name, p in params.items():
        arr = np.asarray(p.data if isinstance(p, Tensor) else p, dtype="<f8")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise FormatError("not a CDEF checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 8
    params: dict[str, np.ndarray] = {}
    try:
        while pos < len(buf):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            nbytes = 8 * count
            if pos + nbytes > len(buf):
                raise FormatError(f"truncated payload for parameter {name!r}")
            params[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
            pos += nbytes
    except struct.error as exc:
        raise FormatError("truncated checkpoint record") from exc
    return params


def save_checkpoint(path, params) -> None:
    Path(path).write_bytes(dumps(params))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())

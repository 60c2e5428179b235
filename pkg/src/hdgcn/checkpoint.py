"""HDT1 tensor container: the on-disk checkpoint format.

Layout (little-endian): magic ``HDT1``, u32 tensor count, then per
tensor: u16 name length, UTF-8 name, u8 rank, u32 per dimension, and
the 32-bit float values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict

import numpy as np

from .errors import DataError

MAGIC = b"HDT1"


def write_tensors(path, tensors: Dict[str, np.ndarray]) -> None:
    """Write named arrays to ``path`` in HDT1 format (values cast to f32)."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            # note: ascontiguousarray would promote 0-d arrays to 1-d
            arr = np.asarray(arr, dtype="<f4", order="C")
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise DataError(f"tensor name too long: {name[:32]}...")
            if arr.ndim > 0xFF:
                raise DataError(f"tensor rank {arr.ndim} exceeds format limit")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_tensors(path) -> Dict[str, np.ndarray]:
    """Read an HDT1 container back into a name -> float32 array dict."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not an HDT1 container (magic {raw[:4]!r})")
    off = 4
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        out[name] = arr.copy()
    if off != len(raw):
        raise DataError(f"{path}: {len(raw) - off} trailing bytes after last tensor")
    return out

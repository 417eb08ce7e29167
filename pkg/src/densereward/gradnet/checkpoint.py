"""Named-tensor archive ("PRCK").

Layout, all integers little-endian::

    header   magic b"PRCK" | u32 version | u32 tensor count | u32 reserved (0)
    tensor   u32 name length | utf-8 name | u32 rank | u64 extent * rank
             | float64 * prod(extents)

Tensors are stored in the order given, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import ValidationError
from .tensor import Tensor

MAGIC = b"PRCK"
VERSION = 1


def dumps(tensors: Mapping[str, Tensor | np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<4sIII", MAGIC, VERSION, len(tensors), 0))
    for name, t in tensors.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise ValidationError("not a PRCK archive")
    _, version, count, _ = struct.unpack_from("<4sIII", blob, 0)
    if version != VERSION:
        raise ValidationError(f"unsupported PRCK version {version}")
    off = 16
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}Q", blob, off)
        off += 8 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).astype(np.float64)
        off += 8 * n
        out[name] = arr.reshape(shape)
    if off != len(blob):
        raise ValidationError("trailing bytes after PRCK archive")
    return out


def save(path: str | Path, tensors: Mapping[str, Tensor | np.ndarray]) -> bytes:
    blob = dumps(tensors)
    Path(path).write_bytes(blob)
    return blob


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())

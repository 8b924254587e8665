"""Checkpoint container: named tensors in a single binary file.

Layout, all integers little-endian:

    magic   4 bytes  b"BSDK"
    version u32      currently 1
    count   u32      number of tensors
    manifest, per tensor:
        name_len u16, name UTF-8 bytes
        dtype    u8   (0 = float32, 1 = float64, 2 = int64)
        rank     u8
        dims     rank * u32
    data: raw little-endian C-order bytes, concatenated in manifest order
"""

from __future__ import annotations

import os
import struct
import tempfile
from typing import Dict, Union

import numpy as np

from ..errors import DataError
from .core import Tensor

MAGIC = b"BSDK"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i8"): 2,
}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}


def _as_array(value) -> np.ndarray:
    arr = value.data if isinstance(value, Tensor) else np.asarray(value)
    le = arr.dtype.newbyteorder("<")
    if le not in _DTYPE_CODES:
        raise DataError(f"checkpoint: unsupported dtype {arr.dtype}")
    # astype rather than ascontiguousarray: the latter promotes rank-0 to rank-1
    return arr.astype(le, copy=False)


def save_checkpoint(path, tensors: Dict[str, Union[np.ndarray, Tensor]]) -> None:
    """Write tensors to `path` atomically (tmp file + rename)."""
    manifest = bytearray()
    blobs = []
    for name, value in tensors.items():
        arr = _as_array(value)
        name_bytes = name.encode("utf-8")
        if len(name_bytes) > 0xFFFF:
            raise DataError(f"checkpoint: tensor name too long ({len(name_bytes)} bytes)")
        manifest += struct.pack("<H", len(name_bytes)) + name_bytes
        manifest += struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim)
        manifest += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blobs.append(arr.tobytes())
    header = MAGIC + struct.pack("<II", VERSION, len(tensors))
    path = os.fspath(path)
    dirname = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(header)
            f.write(manifest)
            for blob in blobs:
                f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataError("checkpoint: truncated file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    """Read a checkpoint; returns writable arrays keyed by tensor name."""
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise DataError(f"checkpoint: bad magic in {path}")
    (version, count) = r.unpack("<II")
    if version != VERSION:
        raise DataError(f"checkpoint: unsupported version {version}")
    entries = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code, rank = r.unpack("<BB")
        if code not in _CODE_DTYPES:
            raise DataError(f"checkpoint: unknown dtype code {code} for {name!r}")
        dims = r.unpack(f"<{rank}I") if rank else ()
        entries.append((name, _CODE_DTYPES[code], dims))
    out: Dict[str, np.ndarray] = {}
    for name, dtype, dims in entries:
        n_items = int(np.prod(dims, dtype=np.int64)) if dims else 1
        raw = r.take(n_items * dtype.itemsize)
        arr = np.frombuffer(raw, dtype=dtype).reshape(dims)
        out[name] = np.array(arr, copy=True)  # frombuffer views are read-only
    if r.pos != len(buf):
        raise DataError(f"checkpoint: {len(buf) - r.pos} trailing bytes in {path}")
    return out

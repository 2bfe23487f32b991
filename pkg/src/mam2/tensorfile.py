"""Self-describing binary tensor files.

Layout (all integers little-endian)::

    magic    8 bytes  b"MAM2TNSR"
    version  u16      1
    dtype    u16      tag from DTYPE_TAGS
    rank     u16
    extents  rank x u64
    payload  prod(extents) scalars, little-endian, row-major
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError
from .numerics import Tensor

MAGIC = b"MAM2TNSR"
VERSION = 1
DTYPE_TAGS = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<i4"),
    4: np.dtype("<i8"),
    5: np.dtype("u1"),
}
_TAG_OF = {dt.newbyteorder("="): tag for tag, dt in DTYPE_TAGS.items()}
_HEADER = struct.Struct("<8sHHH")


def encode(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    native = array.dtype.newbyteorder("=")
    if native not in _TAG_OF:
        raise FormatError("dtype", f"unsupported dtype {array.dtype}")
    tag = _TAG_OF[native]
    header = _HEADER.pack(MAGIC, VERSION, tag, array.ndim)
    extents = struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array, dtype=DTYPE_TAGS[tag]).tobytes(order="C")
    return header + extents + payload


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError("header", f"file has {len(buf)} bytes, header needs {_HEADER.size}")
    magic, version, tag, rank = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError("magic", f"expected {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise FormatError("version", f"unsupported version {version}")
    if tag not in DTYPE_TAGS:
        raise FormatError("dtype", f"unknown dtype tag {tag}")
    offset = _HEADER.size
    if len(buf) < offset + 8 * rank:
        raise FormatError("extents", f"truncated: rank {rank} needs {8 * rank} extent bytes")
    shape = struct.unpack_from(f"<{rank}Q", buf, offset)
    offset += 8 * rank
    dtype = DTYPE_TAGS[tag]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected = count * dtype.itemsize
    if len(buf) - offset != expected:
        raise FormatError("payload", f"expected {expected} payload bytes, found {len(buf) - offset}")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    return data.reshape(shape).astype(dtype.newbyteorder("="))


def write_array(path, array: np.ndarray) -> None:
    """Write atomically: a crash never leaves a half-written file at ``path``."""
    path = Path(path)
    blob = encode(array)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_array(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def write_tensor(path, t) -> None:
    write_array(path, t.data if isinstance(t, Tensor) else t)


def read_tensor(path) -> Tensor:
    arr = read_array(path)
    return Tensor(arr, dtype=arr.dtype)

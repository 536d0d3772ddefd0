"""Binary tensor container (``.s2bt``) used for datasets and checkpoints.

Layout, all little-endian::

    b"S2BT" | version:u8 | rank:u8 | dims:u32 * rank | dtype:u8 | raw values

dtype tag 0 is float32, 1 is uint8.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"S2BT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_TAGS = {np.dtype("float32"): 0, np.dtype("uint8"): 1}


class ContainerError(ValueError):
    """Raised for malformed or truncated container files."""


def encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    tag = _TAGS.get(arr.dtype)
    if tag is None:
        raise TypeError(f"unsupported dtype {arr.dtype}; only float32 and uint8 are stored")
    header = MAGIC + struct.pack("<BB", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape) + struct.pack("<B", tag)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()


def decode(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise ContainerError(f"{source}: bad magic, not an S2BT container")
    version, rank = struct.unpack_from("<BB", buf, 4)
    if version != VERSION:
        raise ContainerError(f"{source}: unsupported container version {version}")
    off = 6
    if len(buf) < off + 4 * rank + 1:
        raise ContainerError(f"{source}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, off)
    off += 4 * rank
    (tag,) = struct.unpack_from("<B", buf, off)
    off += 1
    if tag not in _DTYPES:
        raise ContainerError(f"{source}: unknown dtype tag {tag}")
    dtype = _DTYPES[tag]
    count = int(np.prod(dims, dtype=np.int64))
    expected = count * dtype.itemsize
    if len(buf) - off != expected:
        raise ContainerError(
            f"{source}: payload is {len(buf) - off} bytes, dims {tuple(dims)} need {expected}"
        )
    return np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(dims).astype(dtype.newbyteorder("="))


def save_tensor(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode(arr))


def load_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise ContainerError(f"{path}: cannot read ({exc.strerror})") from exc
    return decode(buf, source=str(path))

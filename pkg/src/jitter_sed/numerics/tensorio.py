"""Binary tensor files: b"JTT1", u32 rank, u32 dims, float32 little-endian payload."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

MAGIC = b"JTT1"


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    header = MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    (rank,) = struct.unpack_from("<I", buf, 4)
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(buf) - offset != 4 * count:
        raise CheckpointError(f"payload holds {len(buf) - offset} bytes, dims {dims} need {4 * count}")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(dims).astype(np.float32)


def save_tensor(path, arr) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())

"""ATNS1 tensor checkpoint format.

Layout: 5-byte magic "ATNS1", u8 dtype tag (0 = float32), u8 rank,
rank little-endian u32 extents, then the raw little-endian float32
payload in row-major order. Used for model checkpoints, corpus images
and saved perturbations.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ATNS1"
DTYPE_F32 = 0


class AtnsFormatError(ValueError):
    pass


def write_tensor(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float32)  # tobytes() below emits C order
    if arr.ndim > 255:
        raise AtnsFormatError(f"rank {arr.ndim} exceeds format limit")
    header = MAGIC + struct.pack("<BB", DTYPE_F32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(arr.astype("<f4", copy=False).tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 7 or raw[:5] != MAGIC:
        raise AtnsFormatError(f"{path}: bad magic")
    dtype_tag, rank = struct.unpack_from("<BB", raw, 5)
    if dtype_tag != DTYPE_F32:
        raise AtnsFormatError(f"{path}: unknown dtype tag {dtype_tag}")
    off = 7
    if len(raw) < off + 4 * rank:
        raise AtnsFormatError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{rank}I", raw, off)
    off += 4 * rank
    count = 1
    for s in shape:
        count *= s
    if len(raw) != off + 4 * count:
        raise AtnsFormatError(
            f"{path}: payload is {len(raw) - off} bytes, expected {4 * count}"
        )
    return np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape).copy()

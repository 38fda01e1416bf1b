"""Binary parameter container.

Layout: the 5 magic bytes ``MSPR1`` followed by one record per tensor:
u32 name length, the name UTF-8 bytes, u32 rank, u32 dims (rank of them),
then the payload as little-endian float64. All integers little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .tensor import Tensor

MAGIC = b"MSPR1"


def save_tensors(path, tensors: dict[str, Tensor]) -> None:
    """Write named tensors in iteration order."""
    chunks = [MAGIC]
    for name, t in tensors.items():
        nb = name.encode("utf-8")
        arr = t.array
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path) -> dict[str, Tensor]:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic, not a parameter container")
    off = len(MAGIC)
    out: dict[str, Tensor] = {}

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"{path}: truncated while reading {what}")
        piece = blob[off: off + n]
        off += n
        return piece

    while off < len(blob):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        count = int(np.prod(dims)) if rank > 0 else 1
        payload = take(8 * count, f"payload of {name!r}")
        arr = np.frombuffer(payload, dtype="<f8").reshape(dims)
        if name in out:
            raise FormatError(f"{path}: duplicate tensor {name!r}")
        out[name] = Tensor(arr)
    return out

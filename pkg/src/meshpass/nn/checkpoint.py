"""Binary checkpoint files: named float64 blocks with shape metadata.

Layout (all integers little-endian unsigned 64-bit unless noted):

    bytes 0..7    magic "MPCKPT01"
    8..15         block count
    per block:
        name length (uint16), name bytes (utf-8)
        ndim (uint8), then ndim dims (uint64 each)
        data: prod(dims) float64 values, little-endian, C order
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MPCKPT01"


class CheckpointError(IOError):
    pass


def save_blocks(path, blocks):
    """Write an ordered mapping of name -> float64 ndarray."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blocks)))
        for name, arr in blocks.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(arr.astype("<f8").tobytes())


def load_blocks(path):
    """Read a checkpoint back into an ordered dict of float64 arrays."""
    blocks = {}
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r} in {path}")
        (count,) = struct.unpack("<Q", fh.read(8))
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(
                struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim)
            )
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(n * 8), dtype="<f8").reshape(shape)
            blocks[name] = np.array(data, dtype=np.float64)
    return blocks

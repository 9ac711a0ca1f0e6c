"""Binary tensor interchange format and CSV export.

Record layout: magic "RATT", version u8, rank u8, extents as u64 little-
endian, then the f64 payload little-endian in row-major order. Records are
self-delimiting, so multi-tensor files are plain concatenations.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = [
    "TensorFormatError",
    "write_tensors",
    "read_tensors",
    "write_tensor",
    "read_tensor",
    "matrix_to_csv",
]

MAGIC = b"RATT"
VERSION = 1


class TensorFormatError(ValueError):
    """Malformed or truncated tensor file."""


def write_tensor(fh, array):
    array = np.asarray(array, dtype=np.float64)
    fh.write(MAGIC)
    fh.write(struct.pack("<BB", VERSION, array.ndim))
    fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
    fh.write(np.ascontiguousarray(array).astype("<f8").tobytes())


def read_tensor(fh):
    """Read one record; returns None at a clean end of file."""
    magic = fh.read(4)
    if magic == b"":
        return None
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    header = fh.read(2)
    if len(header) != 2:
        raise TensorFormatError("truncated header")
    version, rank = struct.unpack("<BB", header)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    raw = fh.read(8 * rank)
    if len(raw) != 8 * rank:
        raise TensorFormatError("truncated extents")
    shape = struct.unpack(f"<{rank}Q", raw) if rank else ()
    count = int(np.prod(shape)) if rank else 1
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise TensorFormatError("truncated payload")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)


def write_tensors(path, arrays):
    with open(path, "wb") as fh:
        for array in arrays:
            write_tensor(fh, array)


def read_tensors(path):
    out = []
    with open(path, "rb") as fh:
        while True:
            array = read_tensor(fh)
            if array is None:
                return out
            out.append(array)


def matrix_to_csv(path, matrix):
    """Row-per-line CSV with '.' decimal marks and ',' separators."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError("CSV export expects a matrix")
    with open(path, "w") as fh:
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")

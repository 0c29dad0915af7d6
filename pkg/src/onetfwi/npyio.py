"""Minimal NPY (v1.0) reader/writer for dataset and export files.

Only the plain cases the toolkit produces are supported: little-endian or
byte-order-free numeric dtypes, C order. Version 2.0 headers are accepted
on read; files are always written as 1.0.
"""

from __future__ import annotations

import ast
import struct
from pathlib import Path

import numpy as np

MAGIC = b"\x93NUMPY"

_SUPPORTED_DESCR = {
    "<f2", "<f4", "<f8",
    "<i2", "<i4", "<i8",
    "<u2", "<u4", "<u8",
    "|i1", "|u1", "|b1",
}


class NpyFormatError(ValueError):
    """Raised for malformed or unsupported NPY content."""


def _parse_header(f) -> tuple[np.dtype, bool, tuple[int, ...], int]:
    start = f.read(8)
    if len(start) != 8 or start[:6] != MAGIC:
        raise NpyFormatError("not an NPY file (bad magic)")
    major, minor = start[6], start[7]
    if major == 1:
        (hlen,) = struct.unpack("<H", f.read(2))
        prefix = 10
    elif major == 2:
        (hlen,) = struct.unpack("<I", f.read(4))
        prefix = 12
    else:
        raise NpyFormatError(f"unsupported NPY version {major}.{minor}")
    header = f.read(hlen).decode("latin1")
    try:
        meta = ast.literal_eval(header)
    except (SyntaxError, ValueError) as exc:
        raise NpyFormatError(f"bad NPY header: {exc}") from exc
    if not isinstance(meta, dict) or set(meta) != {"descr", "fortran_order", "shape"}:
        raise NpyFormatError("NPY header must define descr, fortran_order, shape")
    descr = meta["descr"]
    if descr not in _SUPPORTED_DESCR:
        raise NpyFormatError(f"unsupported dtype descr {descr!r}")
    if meta["fortran_order"] is not False:
        raise NpyFormatError("fortran-order NPY files are not supported")
    shape = meta["shape"]
    if not isinstance(shape, tuple) or not all(
        isinstance(n, int) and n >= 0 for n in shape
    ):
        raise NpyFormatError(f"bad shape in NPY header: {shape!r}")
    return np.dtype(descr), False, shape, prefix + hlen


def read_npy(path, mmap: bool = False) -> np.ndarray:
    """Load an array. With mmap=True the data region is memory-mapped read-only."""
    path = Path(path)
    with open(path, "rb") as f:
        dtype, _, shape, offset = _parse_header(f)
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if mmap:
            return np.memmap(path, dtype=dtype, mode="r", offset=offset, shape=shape)
        buf = f.read(count * dtype.itemsize)
    if len(buf) != count * dtype.itemsize:
        raise NpyFormatError(f"truncated NPY data in {path}")
    arr = np.frombuffer(buf, dtype=dtype, count=count)
    return arr.reshape(shape)


def write_npy(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if not arr.flags.c_contiguous:
        # ascontiguousarray would also promote 0-d to 1-d, so gate it
        arr = np.ascontiguousarray(arr)
    descr = arr.dtype.str
    if descr not in _SUPPORTED_DESCR:
        raise NpyFormatError(f"refusing to write dtype {arr.dtype}")
    header = "{'descr': %r, 'fortran_order': False, 'shape': %r, }" % (
        descr,
        arr.shape,
    )
    # Pad so the data block starts on a 64-byte boundary, per the format note.
    unpadded = 10 + len(header) + 1
    pad = (64 - unpadded % 64) % 64
    header = header + " " * pad + "\n"
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(bytes([1, 0]))
        f.write(struct.pack("<H", len(header)))
        f.write(header.encode("latin1"))
        f.write(arr.tobytes())

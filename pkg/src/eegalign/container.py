"""Bit-exact binary tensor container.

Layout (all little-endian):

    bytes 0..3   magic "NBTF"
    bytes 4..7   version  u32 = 1
    byte  8      dtype    u8  (1 = f32, 2 = f64)
    byte  9      ndim     u8
    then         dims     ndim x u64
    then         payload  row-major values

A 0-dim container holds exactly one value. Write->read round trips are
bit-identical for both dtypes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"NBTF"
VERSION = 1
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def encode_container(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array)
    if array.dtype not in _CODE_FOR:
        raise FormatError(f"unsupported dtype {array.dtype}; only f32/f64 containers exist")
    code = _CODE_FOR[array.dtype]
    header = MAGIC + struct.pack("<IBB", VERSION, code, array.ndim)
    dims = struct.pack(f"<{array.ndim}Q", *array.shape) if array.ndim else b""
    payload = array.astype(_DTYPE_CODES[code], copy=False).tobytes(order="C")
    return header + dims + payload


def write_container(path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_container(array))


def decode_container(blob: bytes) -> np.ndarray:
    if len(blob) < 10:
        raise FormatError("container too short for header", offset=len(blob))
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", offset=0)
    version, code, ndim = struct.unpack_from("<IBB", blob, 4)
    if version != VERSION:
        raise FormatError(f"unknown version {version}", offset=4)
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}", offset=8)
    dims_end = 10 + 8 * ndim
    if len(blob) < dims_end:
        raise FormatError("truncated dims table", offset=len(blob))
    dims = struct.unpack_from(f"<{ndim}Q", blob, 10) if ndim else ()
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims)) if ndim else 1
    expected = dims_end + count * dtype.itemsize
    if len(blob) != expected:
        raise FormatError(
            f"payload length {len(blob) - dims_end} != expected {count * dtype.itemsize}",
            offset=min(len(blob), dims_end),
        )
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=dims_end)
    out = data.reshape(dims).copy()
    return out.astype(out.dtype.newbyteorder("="), copy=False)


def read_container(path) -> np.ndarray:
    return decode_container(Path(path).read_bytes())

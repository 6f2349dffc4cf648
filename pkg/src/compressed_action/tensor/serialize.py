"""Little-endian binary tensor records.

Layout: magic ``MTEN``, u32 version, 5 x u64 shape, u8 dtype tag, raw data.
Tensors of rank below five are stored with leading unit extents.
"""

import math
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from ..errors import PreconditionError, StreamFormatError
from .core import Tensor

MAGIC = b"MTEN"
VERSION = 1
_HEADER = struct.Struct("<4sI5QB")
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_TAGS = {np.dtype("float64"): 0, np.dtype("float32"): 1}


def tensor_to_bytes(value: Union[Tensor, np.ndarray]) -> bytes:
    array = value.data if isinstance(value, Tensor) else np.asarray(value)
    if array.dtype not in _TAGS:
        array = array.astype(np.float64)
    if array.ndim > 5:
        raise PreconditionError(f"tensor records hold at most 5 axes, got shape {array.shape}")
    shape = (1,) * (5 - array.ndim) + tuple(array.shape)
    tag = _TAGS[array.dtype]
    header = _HEADER.pack(MAGIC, VERSION, *shape, tag)
    return header + np.ascontiguousarray(array, dtype=_DTYPES[tag]).tobytes()


def tensor_from_bytes(buffer: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """Parse one record starting at ``offset``; returns the array and the next offset."""
    if len(buffer) - offset < _HEADER.size:
        raise StreamFormatError("truncated tensor header", offset=len(buffer))
    magic, version, *rest = _HEADER.unpack_from(buffer, offset)
    shape, tag = tuple(rest[:5]), rest[5]
    if magic != MAGIC:
        raise StreamFormatError(f"bad tensor magic {magic!r}", offset=offset)
    if version != VERSION:
        raise StreamFormatError(f"unsupported tensor version {version}", offset=offset + 4)
    if tag not in _DTYPES:
        raise StreamFormatError(f"unknown dtype tag {tag}", offset=offset + _HEADER.size - 1)
    if min(shape) < 1:
        raise StreamFormatError(f"tensor shape {shape} has an empty extent", offset=offset + 8)
    dtype = _DTYPES[tag]
    start = offset + _HEADER.size
    nbytes = math.prod(shape) * dtype.itemsize
    if len(buffer) - start < nbytes:
        raise StreamFormatError(f"truncated tensor data: need {nbytes} bytes", offset=len(buffer))
    array = np.frombuffer(buffer, dtype=dtype, count=nbytes // dtype.itemsize, offset=start)
    return array.reshape(shape).astype(dtype.newbyteorder("="), copy=True), start + nbytes


def save_tensor(value: Union[Tensor, np.ndarray], path: Union[str, Path]) -> None:
    Path(path).write_bytes(tensor_to_bytes(value))


def load_tensor(path: Union[str, Path]) -> np.ndarray:
    buffer = Path(path).read_bytes()
    array, end = tensor_from_bytes(buffer)
    if end != len(buffer):
        raise StreamFormatError("trailing bytes after tensor record", offset=end)
    return array

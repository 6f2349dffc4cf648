"""GOPS container: the on-disk form of a ``GopStream``.

All fields little-endian::

    magic "GOPS", u32 version=1, u16 gop_size, u16 search_range, u16 H, u16 W, u32 gop count
    per GOP: I-frame (H*W*3 bytes), u16 P-count,
             per P-frame: MV grid as i16 (dy, dx) pairs row-major,
                          residual as three row-major i16 planes
"""

import logging
import struct
from pathlib import Path
from typing import List, Union

import numpy as np
from pydantic import BaseModel

from ..errors import StreamFormatError
from .types import MACROBLOCK, Gop, GopStream, PFrame

logger = logging.getLogger(__name__)

MAGIC = b"GOPS"
VERSION = 1
_HEADER = struct.Struct("<4sIHHHHI")
_COUNT = struct.Struct("<H")


class StreamHeader(BaseModel):
    """Container header fields."""

    version: int
    gop_size: int
    search_range: int
    height: int
    width: int
    gop_count: int


def stream_to_bytes(stream: GopStream) -> bytes:
    height, width = stream.height, stream.width
    parts = [_HEADER.pack(MAGIC, VERSION, stream.gop_size, stream.search_range, height, width, len(stream.gops))]
    for gop in stream.gops:
        parts.append(np.ascontiguousarray(gop.iframe, dtype=np.uint8).tobytes())
        parts.append(_COUNT.pack(len(gop.pframes)))
        for pframe in gop.pframes:
            parts.append(np.ascontiguousarray(pframe.mv, dtype="<i2").tobytes())
            planes = np.transpose(pframe.residual, (2, 0, 1))
            parts.append(np.ascontiguousarray(planes, dtype="<i2").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buffer: bytes):
        self.buffer = buffer
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.buffer):
            raise StreamFormatError(f"truncated {what}: need {size} bytes", offset=self.offset)
        chunk = self.buffer[self.offset : self.offset + size]
        self.offset += size
        return chunk


def _parse_header(reader: _Reader) -> StreamHeader:
    magic, version, gop_size, search_range, height, width, gop_count = _HEADER.unpack(
        reader.take(_HEADER.size, "header")
    )
    if magic != MAGIC:
        raise StreamFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise StreamFormatError(f"unsupported container version {version}", offset=4)
    if gop_size < 1:
        raise StreamFormatError("gop size must be >= 1", offset=8)
    if height == 0 or width == 0 or height % MACROBLOCK or width % MACROBLOCK:
        raise StreamFormatError(f"frame size {height}x{width} is not a positive multiple of {MACROBLOCK}", offset=12)
    if gop_count == 0:
        raise StreamFormatError("stream holds no GOPs", offset=16)
    return StreamHeader(
        version=version,
        gop_size=gop_size,
        search_range=search_range,
        height=height,
        width=width,
        gop_count=gop_count,
    )


def stream_from_bytes(buffer: bytes) -> GopStream:
    """Parse a container; every malformation raises ``StreamFormatError`` with the byte offset."""
    reader = _Reader(buffer)
    header = _parse_header(reader)
    height, width = header.height, header.width
    grid = (height // MACROBLOCK, width // MACROBLOCK, 2)
    frame_bytes = height * width * 3
    gops: List[Gop] = []
    for index in range(header.gop_count):
        iframe = np.frombuffer(reader.take(frame_bytes, f"I-frame of GOP {index}"), dtype=np.uint8)
        count_offset = reader.offset
        (p_count,) = _COUNT.unpack(reader.take(_COUNT.size, f"P-frame count of GOP {index}"))
        if p_count > header.gop_size - 1:
            raise StreamFormatError(f"GOP {index} holds {p_count} P-frames, limit {header.gop_size - 1}", count_offset)
        is_last = index == header.gop_count - 1
        if not is_last and p_count != header.gop_size - 1:
            raise StreamFormatError(f"GOP {index} is short ({p_count + 1} frames) but not last", count_offset)
        pframes = []
        for t in range(p_count):
            mv_offset = reader.offset
            mv = np.frombuffer(reader.take(int(np.prod(grid)) * 2, f"motion field {index}/{t + 1}"), dtype="<i2")
            if mv.size and np.abs(mv.astype(np.int32)).max() > header.search_range:
                raise StreamFormatError(f"motion vector outside search range in GOP {index}", offset=mv_offset)
            planes = np.frombuffer(reader.take(frame_bytes * 2, f"residual {index}/{t + 1}"), dtype="<i2")
            residual = np.transpose(planes.reshape(3, height, width), (1, 2, 0))
            pframes.append(
                PFrame(mv=mv.reshape(grid).astype(np.int16), residual=np.ascontiguousarray(residual, dtype=np.int16))
            )
        gops.append(Gop(iframe=iframe.reshape(height, width, 3).copy(), pframes=pframes))
    if reader.offset != len(buffer):
        raise StreamFormatError(f"{len(buffer) - reader.offset} trailing bytes after last GOP", offset=reader.offset)
    return GopStream(gops=gops, gop_size=header.gop_size, search_range=header.search_range)


def write_stream(stream: GopStream, path: Union[str, Path]) -> None:
    Path(path).write_bytes(stream_to_bytes(stream))
    logger.debug("wrote %d GOPs to %s", len(stream.gops), path)


def read_stream(path: Union[str, Path]) -> GopStream:
    return stream_from_bytes(Path(path).read_bytes())


def read_header(path: Union[str, Path]) -> StreamHeader:
    """Parse only the fixed header."""
    with open(path, "rb") as handle:
        return _parse_header(_Reader(handle.read(_HEADER.size)))

"""GOP encoder and sequential decoder."""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

import numpy as np

from ..config.manager import default_thread_count
from ..errors import CodecError, StreamFormatError
from .motion import block_match, expand_block_field, motion_compensate
from .types import MACROBLOCK, Gop, GopStream, PFrame, RawVideo

logger = logging.getLogger(__name__)


def _check_extents(height: int, width: int) -> None:
    pad_h = (-height) % MACROBLOCK
    pad_w = (-width) % MACROBLOCK
    if pad_h or pad_w:
        raise CodecError(
            f"frame {height}x{width} is not a multiple of {MACROBLOCK}; "
            f"pad height by {pad_h} and width by {pad_w} pixels"
        )


def _encode_gop(frames: np.ndarray, search_range: int) -> Gop:
    pframes: List[PFrame] = []
    previous = frames[0]
    for current in frames[1:]:
        mv, residual = block_match(previous, current, MACROBLOCK, search_range)
        pframes.append(PFrame(mv=mv, residual=residual))
        # lossless coding: the decoded frame equals the source frame
        previous = current
    return Gop(iframe=frames[0].copy(), pframes=pframes)


def encode(
    video: RawVideo,
    gop_size: int = 12,
    search_range: int = 8,
    threads: Optional[int] = None,
) -> GopStream:
    """Split ``video`` into GOPs of ``gop_size`` frames and block-match every P-frame."""
    _check_extents(video.height, video.width)
    if gop_size < 1:
        raise CodecError(f"gop size must be >= 1, got {gop_size}")
    if search_range < 0:
        raise CodecError(f"search range must be >= 0, got {search_range}")

    chunks = [video.frames[start : start + gop_size] for start in range(0, video.num_frames, gop_size)]
    workers = threads or default_thread_count()
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            gops = list(pool.map(lambda chunk: _encode_gop(chunk, search_range), chunks))
    else:
        gops = [_encode_gop(chunk, search_range) for chunk in chunks]
    logger.debug("encoded %d frames into %d GOPs", video.num_frames, len(gops))
    return GopStream(gops=gops, gop_size=gop_size, search_range=search_range)


def validate_gop(gop: Gop, search_range: int, index: int = 0) -> None:
    """Raise ``StreamFormatError`` when a GOP's arrays are inconsistent."""
    height, width = gop.iframe.shape[:2]
    grid = (height // MACROBLOCK, width // MACROBLOCK, 2)
    for t, pframe in enumerate(gop.pframes, start=1):
        if pframe.mv.shape != grid or pframe.residual.shape != gop.iframe.shape:
            raise StreamFormatError(f"GOP {index} frame {t}: array shapes do not match the I-frame")
        if pframe.mv.size and np.abs(pframe.mv.astype(np.int32)).max() > search_range:
            raise StreamFormatError(f"GOP {index} frame {t}: motion vector exceeds search range {search_range}")


def decode_gop(gop: Gop) -> np.ndarray:
    """Sequentially reconstruct every frame of ``gop`` as unclipped int32."""
    frames = np.empty((gop.num_frames,) + gop.iframe.shape, dtype=np.int32)
    frames[0] = gop.iframe
    for t, pframe in enumerate(gop.pframes, start=1):
        prediction = motion_compensate(frames[t - 1], expand_block_field(pframe.mv))
        frames[t] = prediction + pframe.residual
    return frames


def decode_sequential(stream: GopStream) -> RawVideo:
    """frame_t(p) = frame_{t-1}(p - M_t(p)) + r_t(p) within each GOP."""
    decoded = []
    for index, gop in enumerate(stream.gops):
        validate_gop(gop, stream.search_range, index)
        decoded.append(decode_gop(gop))
    frames = np.clip(np.concatenate(decoded, axis=0), 0, 255).astype(np.uint8)
    return RawVideo(frames=frames)

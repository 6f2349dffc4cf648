"""Accumulation of motion vectors and residuals back to the I-frame."""

import logging

import numpy as np

from ..errors import PreconditionError
from .motion import expand_block_field, motion_compensate, source_coordinates
from .types import AccumulatedFields, Gop

logger = logging.getLogger(__name__)


def accumulate(gop: Gop) -> AccumulatedFields:
    """Trace every pixel of every P-frame back to the I-frame.

    With q = clamp(p - M_t(p)):
        D_t(p) = (p - q) + D_{t-1}(q)
        R_t(p) = r_t(p) + R_{t-1}(q)
    p - q equals M_t(p) whenever the reference lies inside the frame; at the
    border it is the clamped step, which keeps I(p - D_t(p)) + R_t(p) equal to
    the sequentially decoded frame everywhere.
    """
    height, width = gop.height, gop.width
    count = gop.num_frames
    mv = np.zeros((count, height, width, 2), dtype=np.int32)
    residual = np.zeros((count, height, width, 3), dtype=np.int32)
    rows, cols = np.indices((height, width), dtype=np.int32)
    for t, pframe in enumerate(gop.pframes, start=1):
        src_rows, src_cols = source_coordinates(expand_block_field(pframe.mv))
        step = np.stack([rows - src_rows, cols - src_cols], axis=-1)
        mv[t] = step + mv[t - 1][src_rows, src_cols]
        residual[t] = pframe.residual + residual[t - 1][src_rows, src_cols]
    return AccumulatedFields(mv=mv, residual=residual)


def reconstruct_from_accumulated(gop: Gop, fields: AccumulatedFields, t: int) -> np.ndarray:
    """I(p - D_t(p)) + R_t(p) clipped to uint8."""
    if not 0 <= t < gop.num_frames or t >= fields.num_frames:
        raise IndexError(f"frame index {t} outside GOP of {gop.num_frames} frames")
    if fields.mv.shape[1:3] != gop.iframe.shape[:2]:
        raise PreconditionError("accumulated fields do not match the GOP's frame size")
    frame = motion_compensate(gop.iframe.astype(np.int32), fields.mv[t]) + fields.residual[t]
    return np.clip(frame, 0, 255).astype(np.uint8)

"""Block motion estimation and motion compensation."""

import logging
from functools import lru_cache
from typing import Tuple

import numpy as np

from ..errors import CodecError
from .types import MACROBLOCK

logger = logging.getLogger(__name__)


def expand_block_field(mv: np.ndarray, block: int = MACROBLOCK) -> np.ndarray:
    """Broadcast an (Hb, Wb, 2) macroblock field to (H, W, 2) per-pixel displacements."""
    return np.repeat(np.repeat(mv.astype(np.int32), block, axis=0), block, axis=1)


def source_coordinates(displacement: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Reference coordinates p - d(p), clamped to the frame border."""
    height, width = displacement.shape[:2]
    rows, cols = np.indices((height, width), dtype=np.int32)
    src_rows = np.clip(rows - displacement[..., 0], 0, height - 1)
    src_cols = np.clip(cols - displacement[..., 1], 0, width - 1)
    return src_rows, src_cols


def motion_compensate(reference: np.ndarray, displacement: np.ndarray) -> np.ndarray:
    """Prediction frame(p) = reference(p - d(p)) with border clamping."""
    src_rows, src_cols = source_coordinates(displacement)
    return reference[src_rows, src_cols]


@lru_cache(maxsize=16)
def candidate_displacements(search_range: int) -> Tuple[Tuple[int, int], ...]:
    """Search order: smallest |dy|+|dx| first, then lexicographic (dy, dx)."""
    span = range(-search_range, search_range + 1)
    ordered = sorted(((dy, dx) for dy in span for dx in span), key=lambda d: (abs(d[0]) + abs(d[1]), d[0], d[1]))
    return tuple(ordered)


def block_match(
    reference: np.ndarray,
    current: np.ndarray,
    block: int = MACROBLOCK,
    search_range: int = 8,
) -> Tuple[np.ndarray, np.ndarray]:
    """Exhaustive SAD search per macroblock.

    Returns the (H/block, W/block, 2) int16 motion field and the int16
    residual ``current - prediction``, which makes the encoding lossless.
    """
    if reference.shape != current.shape:
        raise CodecError(f"frame sizes differ: reference {reference.shape} vs current {current.shape}")
    height, width = current.shape[:2]
    if height % block or width % block:
        raise CodecError(f"frame {height}x{width} is not a multiple of the {block}-pixel block")
    if search_range < 0:
        raise CodecError(f"search range must be >= 0, got {search_range}")

    cur = current.astype(np.int32)
    ref = np.pad(
        reference.astype(np.int32),
        ((search_range, search_range), (search_range, search_range), (0, 0)),
        mode="edge",
    )
    hb, wb = height // block, width // block
    best_sad = np.full((hb, wb), np.iinfo(np.int64).max, dtype=np.int64)
    best_mv = np.zeros((hb, wb, 2), dtype=np.int16)
    for dy, dx in candidate_displacements(search_range):
        # edge padding by the search range reproduces coordinate clamping
        pred = ref[search_range - dy : search_range - dy + height, search_range - dx : search_range - dx + width]
        sad = np.abs(cur - pred).sum(axis=2).reshape(hb, block, wb, block).sum(axis=(1, 3))
        better = sad < best_sad
        best_sad = np.where(better, sad, best_sad)
        best_mv[better] = (dy, dx)

    prediction = motion_compensate(reference.astype(np.int32), expand_block_field(best_mv, block))
    residual = (cur - prediction).astype(np.int16)
    return best_mv, residual

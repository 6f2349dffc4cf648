"""Clip sampling: paired I-frame and accumulated MV/residual inputs."""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..errors import PreconditionError
from ..tensor.core import Tensor
from .accumulate import accumulate
from .types import ClipSample, GopStream

logger = logging.getLogger(__name__)

RESIDUAL_SCALE = 255.0


@dataclass(frozen=True, eq=False)
class StreamFeatures:
    """Per-frame view of a stream: governing I-frame and accumulated fields."""

    iframes: np.ndarray  # (G, H, W, 3) uint8
    frame_gop: np.ndarray  # (T,) index into iframes
    acc_mv: np.ndarray  # (T, H, W, 2) int32
    acc_residual: np.ndarray  # (T, H, W, 3) int32
    search_range: int

    @property
    def num_frames(self) -> int:
        return self.frame_gop.shape[0]


def extract_features(stream: GopStream) -> StreamFeatures:
    """Accumulate every GOP once so that clips can be cut repeatedly."""
    mvs, residuals, owners = [], [], []
    for index, gop in enumerate(stream.gops):
        fields = accumulate(gop)
        mvs.append(fields.mv)
        residuals.append(fields.residual)
        owners.extend([index] * gop.num_frames)
    return StreamFeatures(
        iframes=np.stack([g.iframe for g in stream.gops]),
        frame_gop=np.asarray(owners, dtype=np.int64),
        acc_mv=np.concatenate(mvs, axis=0),
        acc_residual=np.concatenate(residuals, axis=0),
        search_range=stream.search_range,
    )


def clip_indices(total: int, n_frames: int, clip_index: int = 0, n_clips: int = 1) -> np.ndarray:
    """Uniformly spaced frame indices for clip ``clip_index`` of ``n_clips``.

    A clip as long as the video takes every frame, so all clips coincide.
    """
    if n_frames < 1 or n_frames > total:
        raise PreconditionError(f"cannot sample {n_frames} frames from a {total}-frame video")
    if not 0 <= clip_index < n_clips:
        raise PreconditionError(f"clip index {clip_index} outside 0..{n_clips - 1}")
    k = np.arange(n_frames)
    if n_frames == total:
        idx = np.floor((k + 0.5) * total / n_frames)
    else:
        idx = np.floor((k + 0.5 + clip_index) * total / (n_frames + n_clips - 1))
    return np.clip(idx.astype(np.int64), 0, total - 1)


def sample_clip(
    stream: Optional[GopStream],
    n_frames: int = 8,
    crop: Tuple[int, int] = (48, 48),
    mode: str = "test",
    clip_index: int = 0,
    n_clips: int = 1,
    label: int = -1,
    rng: Optional[np.random.Generator] = None,
    features: Optional[StreamFeatures] = None,
) -> ClipSample:
    """Cut one (RGB, MVR) clip pair from ``stream``.

    Train mode takes a random crop and a random horizontal flip (which also
    negates dx); test mode centre-crops and is deterministic.
    """
    if mode not in ("train", "test"):
        raise PreconditionError(f"unknown sampling mode '{mode}' (expected train or test)")
    if features is None:
        if stream is None:
            raise PreconditionError("sample_clip needs a stream or precomputed features")
        features = extract_features(stream)
    crop_h, crop_w = crop
    height, width = features.iframes.shape[1:3]
    if crop_h > height or crop_w > width or crop_h < 1 or crop_w < 1:
        raise PreconditionError(f"crop {crop_h}x{crop_w} does not fit frames of {height}x{width}")

    idx = clip_indices(features.num_frames, n_frames, clip_index, n_clips)
    flip = False
    if mode == "train":
        rng = rng or np.random.default_rng()
        top = int(rng.integers(0, height - crop_h + 1))
        left = int(rng.integers(0, width - crop_w + 1))
        flip = bool(rng.random() < 0.5)
    else:
        top, left = (height - crop_h) // 2, (width - crop_w) // 2
    rows, cols = slice(top, top + crop_h), slice(left, left + crop_w)

    rgb = features.iframes[features.frame_gop[idx]][:, rows, cols].astype(np.float64) / 255.0
    mv = features.acc_mv[idx][:, rows, cols].astype(np.float64) / max(features.search_range, 1)
    res = features.acc_residual[idx][:, rows, cols].astype(np.float64) / RESIDUAL_SCALE
    mvr = np.concatenate([mv, res], axis=-1)
    if flip:
        rgb = rgb[:, :, ::-1]
        mvr = mvr[:, :, ::-1].copy()
        mvr[..., 1] = -mvr[..., 1]

    # (T, H, W, C) -> (1, C, T, H, W)
    rgb_clip = np.ascontiguousarray(np.transpose(rgb, (3, 0, 1, 2))[None])
    mvr_clip = np.ascontiguousarray(np.transpose(mvr, (3, 0, 1, 2))[None])
    return ClipSample(rgb_clip=Tensor(rgb_clip), mvr_clip=Tensor(mvr_clip), label=label)


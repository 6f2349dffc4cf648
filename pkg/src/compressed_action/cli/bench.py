"""Self-benchmark: frames per second for encoding, accumulation and model forward."""

import logging
import time
from typing import Dict, Optional

import numpy as np

from ..codec.encoder import encode
from ..codec.sampling import extract_features, sample_clip
from ..codec.types import RawVideo
from ..model.config import ModelConfig
from ..model.network import build_model
from ..training.dataset import DatasetSpec, render_video

logger = logging.getLogger(__name__)


def _timed(fn, repeats: int) -> float:
    started = time.perf_counter()
    for _ in range(repeats):
        fn()
    return max(time.perf_counter() - started, 1e-9)


def run_bench(
    frames: int = 24,
    size: int = 64,
    repeats: int = 1,
    clip_frames: int = 8,
    crop: int = 48,
    seed: int = 0,
    threads: Optional[int] = None,
    model_cfg: Optional[ModelConfig] = None,
) -> Dict[str, object]:
    """Timing fields vary between runs; every other field is deterministic."""
    spec = DatasetSpec(height=size, width=size, frames=frames)
    video: RawVideo = render_video(0, spec, np.random.default_rng(seed))
    stream = encode(video, threads=threads)

    encode_seconds = _timed(lambda: encode(video, threads=threads), repeats)
    extract_seconds = _timed(lambda: extract_features(stream), repeats)

    model = build_model(model_cfg or ModelConfig(seed=seed))
    clip = sample_clip(stream, n_frames=clip_frames, crop=(crop, crop))
    forward_seconds = _timed(lambda: model.forward(clip.rgb_clip, clip.mvr_clip), repeats)

    report = {
        "frames": frames,
        "height": size,
        "width": size,
        "repeats": repeats,
        "clip_frames": clip_frames,
        "params": model.params.count(),
        "encode_fps": frames * repeats / encode_seconds,
        "extract_fps": frames * repeats / extract_seconds,
        "forward_fps": clip_frames * repeats / forward_seconds,
    }
    logger.debug("bench: %s", report)
    return report

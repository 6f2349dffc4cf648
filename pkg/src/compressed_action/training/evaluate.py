"""Deterministic centre-crop evaluation with 1-clip or multi-clip testing."""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from ..errors import DatasetError, PreconditionError
from ..model.network import TwoStreamNetwork
from .dataset import InputStats, VideoDataset, collate

logger = logging.getLogger(__name__)

HEADS = ("score", "z_rgb", "z_mvr", "z_fused")


class EvalResult(BaseModel):
    """Top-1 accuracy of the fused score and of each stream head."""

    split: str
    n_clips: int
    count: int
    top1: float = Field(ge=0.0, le=1.0)
    top1_rgb: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    top1_mvr: Optional[float] = Field(default=None, ge=0.0, le=1.0)

    def report(self) -> Dict[str, object]:
        return self.model_dump()


def predict_video(
    model: TwoStreamNetwork,
    dataset: VideoDataset,
    index: int,
    stats: InputStats,
    n_clips: int = 1,
    n_frames: int = 8,
    crop: Tuple[int, int] = (48, 48),
) -> Dict[str, np.ndarray]:
    """Per-head logits averaged over ``n_clips`` uniformly spaced clips."""
    clips = [
        dataset.clip(index, n_frames=n_frames, crop=crop, mode="test", clip_index=c, n_clips=n_clips)
        for c in range(n_clips)
    ]
    rgb, mvr, _ = collate(clips, stats)
    outputs = model.forward(rgb, mvr)
    logits = {}
    for head in HEADS:
        value = getattr(outputs, head)
        if value is not None:
            logits[head] = value.data.mean(axis=0)
    return logits


def top1(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    if len(labels) == 0:
        raise DatasetError("top-1 of an empty set")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate(
    model: TwoStreamNetwork,
    dataset: VideoDataset,
    stats: InputStats,
    n_clips: int = 1,
    n_frames: int = 8,
    crop: Tuple[int, int] = (48, 48),
    threads: int = 1,
    dump: Optional[Union[str, Path]] = None,
) -> EvalResult:
    """Top-1 over ``dataset``; a pure function of (model, split, n_clips)."""
    if len(dataset) == 0:
        raise DatasetError(f"split '{dataset.split}' is empty")
    if n_clips < 1:
        raise PreconditionError(f"n_clips must be >= 1, got {n_clips}")

    def run(index: int) -> Dict[str, np.ndarray]:
        return predict_video(model, dataset, index, stats, n_clips=n_clips, n_frames=n_frames, crop=crop)

    indices = range(len(dataset))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            predictions = list(pool.map(run, indices))
    else:
        predictions = [run(i) for i in indices]

    labels = dataset.labels
    stacked = {head: np.stack([p[head] for p in predictions]) for head in predictions[0]}
    if dump is not None:
        write_logit_dump(dump, [e.path for e in dataset.entries], labels, stacked["score"])
    result = EvalResult(
        split=dataset.split,
        n_clips=n_clips,
        count=len(labels),
        top1=top1(stacked["score"], labels),
        top1_rgb=top1(stacked["z_rgb"], labels) if "z_rgb" in stacked else None,
        top1_mvr=top1(stacked["z_mvr"], labels) if "z_mvr" in stacked else None,
    )
    logger.info("%s top-1 %.4f over %d videos, %d clip(s)", dataset.split, result.top1, result.count, n_clips)
    return result


def write_logit_dump(path: Union[str, Path], names: List[str], labels: np.ndarray, scores: np.ndarray) -> None:
    """One TSV line per video: path, label, prediction, comma-joined fused logits."""
    lines = ["path\tlabel\tprediction\tlogits\n"]
    for name, label, row in zip(names, labels, scores):
        values = ",".join(repr(float(v)) for v in row)
        lines.append(f"{name}\t{int(label)}\t{int(np.argmax(row))}\t{values}\n")
    Path(path).write_text("".join(lines))


def read_logit_dump(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    """(labels, logits) from a dump written by ``write_logit_dump``."""
    labels, rows = [], []
    for line in Path(path).read_text().splitlines()[1:]:
        _, label, _, values = line.split("\t")
        labels.append(int(label))
        rows.append([float(v) for v in values.split(",")])
    return np.asarray(labels, dtype=np.int64), np.asarray(rows)

"""Synthetic motion-defined video dataset.

Each video is a static textured background with one textured shape whose
motion pattern is the class. Videos are encoded into GOP containers and
indexed by ``manifest.tsv`` (``relative-path<TAB>label<TAB>split``).
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..codec.container import read_stream, write_stream
from ..codec.encoder import encode
from ..codec.sampling import StreamFeatures, extract_features, sample_clip
from ..codec.types import MACROBLOCK, ClipSample, RawVideo
from ..config.manager import default_thread_count, format_structured_text
from ..errors import DatasetError
from ..tensor.core import Tensor

logger = logging.getLogger(__name__)

MANIFEST = "manifest.tsv"
SPEC_FILE = "dataset.txt"
SPLITS = ("train", "val", "test")

# label -> (name, shape); squares 0-2 and discs 3-4 differ only in motion.
# Every pattern maps to itself under a horizontal mirror.
PATTERNS = (
    ("translate_down", "square"),
    ("translate_up", "square"),
    ("translate_sideways", "square"),
    ("oscillate", "disc"),
    ("zoom", "disc"),
)


class DatasetSpec(BaseModel):
    """Parameters of the synthetic dataset."""

    model_config = ConfigDict(frozen=True)

    n_classes: int = Field(default=5, ge=2, le=len(PATTERNS))
    videos_per_class: int = Field(default=20, ge=1)
    height: int = Field(default=64, ge=1)
    width: int = Field(default=64, ge=1)
    frames: int = Field(default=24, ge=2)
    gop_size: int = Field(default=12, ge=1)
    search_range: int = Field(default=8, ge=0)
    object_size: int = Field(default=24, ge=2)
    position_jitter: int = Field(default=8, ge=0)
    speeds: Tuple[int, ...] = (1, 2)
    oscillation_amplitude: int = 6
    oscillation_period: int = 8
    noise_std: float = Field(default=0.0, ge=0.0)
    split_fractions: Tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "DatasetSpec":
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise ValueError(f"split fractions {self.split_fractions} must be non-negative and sum to 1")
        if not self.speeds or min(self.speeds) < 1:
            raise ValueError("speeds must be positive")
        return self

    def check_extents(self) -> None:
        pad_h = (-self.height) % MACROBLOCK
        pad_w = (-self.width) % MACROBLOCK
        if pad_h or pad_w:
            raise DatasetError(
                f"frame size {self.height}x{self.width} is not a multiple of {MACROBLOCK}; "
                f"pad height by {pad_h} and width by {pad_w} pixels"
            )


class ManifestEntry(BaseModel):
    """One manifest line."""

    path: str
    label: int = Field(ge=0)
    split: str


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _background(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    coarse = rng.integers(40, 200, size=(math.ceil(height / 8), math.ceil(width / 8), 3))
    base = np.kron(coarse, np.ones((8, 8, 1), dtype=np.int64))[:height, :width]
    grain = rng.integers(-20, 21, size=(height, width, 3))
    return np.clip(base + grain, 0, 255)


def _trajectory(label: int, spec: DatasetSpec, rng: np.random.Generator):
    """Per-frame (centre row, centre column, size) for one video.

    Paths are centred on a jittered frame centre, so objects stay near the
    middle of the frame and inside every crop.
    """
    jitter = spec.position_jitter
    cy = spec.height / 2 + int(rng.integers(-jitter, jitter + 1))
    cx = spec.width / 2 + int(rng.integers(-jitter, jitter + 1))
    speed = int(rng.choice(spec.speeds))
    # sideways direction is drawn per video; a mirrored clip stays in its class
    sideways = int(rng.choice([-1, 1]))
    size = spec.object_size
    name = PATTERNS[label][0]
    middle = (spec.frames - 1) / 2
    for t in range(spec.frames):
        if name == "translate_down":
            yield cy + speed * (t - middle), cx, size
        elif name == "translate_up":
            yield cy - speed * (t - middle), cx, size
        elif name == "translate_sideways":
            yield cy, cx + sideways * speed * (t - middle), size
        elif name == "oscillate":
            phase = 2.0 * math.pi * t / spec.oscillation_period
            yield cy, cx + round(spec.oscillation_amplitude * math.sin(phase)), size
        else:
            # block-like growth: two pixels every second frame
            grown = size // 2 + 2 * (t // 2)
            yield cy, cx, min(grown, min(spec.height, spec.width) - 8)


def render_video(label: int, spec: DatasetSpec, rng: np.random.Generator) -> RawVideo:
    """Render one video of class ``label`` over a static background."""
    shape = PATTERNS[label][1]
    background = _background(rng, spec.height, spec.width)
    colour = rng.integers(0, 256, size=3)
    texture = rng.integers(-40, 41, size=(2 * spec.height, 2 * spec.width, 3))
    rows = np.arange(spec.height)[:, None]
    cols = np.arange(spec.width)[None, :]
    frames = np.empty((spec.frames, spec.height, spec.width, 3), dtype=np.uint8)
    for t, (cy, cx, size) in enumerate(_trajectory(label, spec, rng)):
        dy, dx = rows - cy, cols - cx
        half = size / 2.0
        if shape == "square":
            mask = (np.abs(dy) < half) & (np.abs(dx) < half)
        else:
            mask = dy**2 + dx**2 < half**2
        # texture is indexed in object coordinates so that translation is exact
        ty = np.clip(np.floor(dy).astype(np.int64) + spec.height, 0, 2 * spec.height - 1)
        tx = np.clip(np.floor(dx).astype(np.int64) + spec.width, 0, 2 * spec.width - 1)
        surface = np.clip(colour + texture[ty, tx], 0, 255)
        frame = np.where(mask[..., None], surface, background)
        if spec.noise_std > 0:
            frame = frame + rng.normal(0.0, spec.noise_std, size=frame.shape)
        frames[t] = np.clip(np.rint(frame), 0, 255).astype(np.uint8)
    return RawVideo(frames=frames)


def _split_for(index: int, order: np.ndarray, counts: Tuple[int, int, int]) -> str:
    rank = int(np.where(order == index)[0][0])
    if rank < counts[0]:
        return "train"
    if rank < counts[0] + counts[1]:
        return "val"
    return "test"


def split_counts(n: int, fractions: Sequence[float]) -> Tuple[int, int, int]:
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    return n_train, n_val, n - n_train - n_val


def generate_dataset(spec: DatasetSpec, root: Union[str, Path], threads: Optional[int] = None) -> List[ManifestEntry]:
    """Render, encode and index the dataset under ``root``; same seed gives identical bytes."""
    spec.check_extents()
    root = Path(root)
    (root / "videos").mkdir(parents=True, exist_ok=True)

    jobs = [(label, index) for label in range(spec.n_classes) for index in range(spec.videos_per_class)]

    def build(job: Tuple[int, int]) -> str:
        label, index = job
        rng = np.random.default_rng([spec.seed, label, index])
        video = render_video(label, spec, rng)
        stream = encode(video, gop_size=spec.gop_size, search_range=spec.search_range, threads=1)
        relpath = f"videos/{PATTERNS[label][0]}_{index:03d}.gops"
        write_stream(stream, root / relpath)
        return relpath

    workers = threads or default_thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            paths = list(pool.map(build, jobs))
    else:
        paths = [build(job) for job in jobs]

    counts = split_counts(spec.videos_per_class, spec.split_fractions)
    entries = []
    for label in range(spec.n_classes):
        order = np.random.default_rng([spec.seed, label, 1 << 20]).permutation(spec.videos_per_class)
        for index in range(spec.videos_per_class):
            entries.append(
                ManifestEntry(
                    path=paths[label * spec.videos_per_class + index],
                    label=label,
                    split=_split_for(index, order, counts),
                )
            )
    write_manifest(root, entries)
    (root / SPEC_FILE).write_text(format_structured_text(spec.model_dump(mode="json")))
    logger.info("generated %d videos in %s", len(entries), root)
    return entries


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


def write_manifest(root: Union[str, Path], entries: Sequence[ManifestEntry]) -> Path:
    target = Path(root) / MANIFEST
    target.write_text("".join(f"{e.path}\t{e.label}\t{e.split}\n" for e in entries))
    return target


def read_manifest(root: Union[str, Path]) -> List[ManifestEntry]:
    path = Path(root) / MANIFEST
    if not path.exists():
        raise DatasetError(f"no manifest at {path}")
    entries = []
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise DatasetError(f"{path}:{number}: expected path<TAB>label<TAB>split")
        relpath, label, split = fields
        if split not in SPLITS:
            raise DatasetError(f"{path}:{number}: unknown split '{split}'")
        try:
            entries.append(ManifestEntry(path=relpath, label=int(label), split=split))
        except ValueError as e:
            raise DatasetError(f"{path}:{number}: bad label {label!r}") from e
    return entries


# ---------------------------------------------------------------------------
# clips and input statistics
# ---------------------------------------------------------------------------


class InputStats(BaseModel):
    """Per-channel RGB mean/std over the training split (values in [0, 1])."""

    rgb_mean: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rgb_std: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def to_header(self) -> Dict[str, List[float]]:
        return {"input.rgb_mean": list(self.rgb_mean), "input.rgb_std": list(self.rgb_std)}

    @classmethod
    def from_header(cls, header: Dict) -> "InputStats":
        if "input.rgb_mean" not in header:
            return cls()
        return cls(rgb_mean=tuple(header["input.rgb_mean"]), rgb_std=tuple(header["input.rgb_std"]))

    def standardize(self, rgb: np.ndarray) -> np.ndarray:
        """(N, 3, T, H, W) in [0, 1] -> zero mean, unit variance per channel."""
        mean = np.asarray(self.rgb_mean).reshape(1, 3, 1, 1, 1)
        std = np.asarray(self.rgb_std).reshape(1, 3, 1, 1, 1)
        return (rgb - mean) / std


class VideoDataset:
    """Manifest split with lazily decoded, cached stream features."""

    def __init__(self, root: Union[str, Path], split: str, classes: Optional[int] = None):
        if split not in SPLITS:
            raise DatasetError(f"unknown split '{split}' (expected one of {', '.join(SPLITS)})")
        self.root = Path(root)
        self.split = split
        self.entries = [e for e in read_manifest(root) if e.split == split]
        self._features: Dict[int, StreamFeatures] = {}
        labels = {e.label for e in read_manifest(root)}
        self.num_classes = classes or (max(labels) + 1 if labels else 0)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def labels(self) -> np.ndarray:
        return np.asarray([e.label for e in self.entries], dtype=np.int64)

    def features(self, index: int) -> StreamFeatures:
        if index not in self._features:
            self._features[index] = extract_features(read_stream(self.root / self.entries[index].path))
        return self._features[index]

    def clip(
        self,
        index: int,
        n_frames: int = 8,
        crop: Tuple[int, int] = (48, 48),
        mode: str = "test",
        clip_index: int = 0,
        n_clips: int = 1,
        rng: Optional[np.random.Generator] = None,
    ) -> ClipSample:
        features = self.features(index)
        return sample_clip(
            None,
            n_frames=n_frames,
            crop=crop,
            mode=mode,
            clip_index=clip_index,
            n_clips=n_clips,
            label=self.entries[index].label,
            rng=rng,
            features=features,
        )


def compute_input_stats(dataset: VideoDataset) -> InputStats:
    """Channel statistics of every I-frame in ``dataset``."""
    if len(dataset) == 0:
        raise DatasetError(f"split '{dataset.split}' is empty; cannot compute input statistics")
    total = np.zeros(3)
    total_sq = np.zeros(3)
    count = 0
    for index in range(len(dataset)):
        features = dataset.features(index)
        frames = features.iframes[features.frame_gop].astype(np.float64) / 255.0
        total += frames.sum(axis=(0, 1, 2))
        total_sq += (frames**2).sum(axis=(0, 1, 2))
        count += frames.shape[0] * frames.shape[1] * frames.shape[2]
    mean = total / count
    std = np.sqrt(np.maximum(total_sq / count - mean**2, 1e-12))
    return InputStats(rgb_mean=tuple(mean.tolist()), rgb_std=tuple(std.tolist()))


def collate(samples: Sequence[ClipSample], stats: InputStats) -> Tuple[Tensor, Tensor, np.ndarray]:
    """Stack clips into (rgb, mvr, labels) batches with standardized RGB."""
    if not samples:
        raise DatasetError("cannot build a batch from zero clips")
    rgb = np.concatenate([s.rgb_clip.data for s in samples], axis=0)
    mvr = np.concatenate([s.mvr_clip.data for s in samples], axis=0)
    labels = np.asarray([s.label for s in samples], dtype=np.int64)
    return Tensor(stats.standardize(rgb)), Tensor(mvr), labels

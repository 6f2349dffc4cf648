"""Value types of the synthetic compressed-video codec.

Array-carrying values are frozen dataclasses; they are never mutated after
construction and can be shared freely between workers.
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from ..errors import CodecError
from ..tensor.core import Tensor

MACROBLOCK = 16


@dataclass(frozen=True, eq=False)
class RawVideo:
    """T x H x W x 3 uint8 frames plus nominal frame rate."""

    frames: np.ndarray
    fps: float = 25.0

    def __post_init__(self):
        frames = self.frames
        if frames.ndim != 4 or frames.shape[-1] != 3 or frames.shape[0] < 1:
            raise CodecError(f"video frames must be T x H x W x 3 with T >= 1, got {frames.shape}")
        if frames.dtype != np.uint8:
            raise CodecError(f"video frames must be uint8, got {frames.dtype}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def equals(self, other: "RawVideo") -> bool:
        return self.frames.shape == other.frames.shape and bool(np.array_equal(self.frames, other.frames))


@dataclass(frozen=True, eq=False)
class PFrame:
    """Per-macroblock (dy, dx) displacements and the exact residual plane."""

    mv: np.ndarray
    residual: np.ndarray


@dataclass(frozen=True, eq=False)
class Gop:
    """One raw I-frame followed by predicted frames."""

    iframe: np.ndarray
    pframes: List[PFrame] = field(default_factory=list)

    @property
    def num_frames(self) -> int:
        return 1 + len(self.pframes)

    @property
    def height(self) -> int:
        return self.iframe.shape[0]

    @property
    def width(self) -> int:
        return self.iframe.shape[1]


@dataclass(frozen=True, eq=False)
class GopStream:
    gops: List[Gop]
    gop_size: int = 12
    search_range: int = 8

    @property
    def num_frames(self) -> int:
        return sum(g.num_frames for g in self.gops)

    @property
    def height(self) -> int:
        return self.gops[0].height

    @property
    def width(self) -> int:
        return self.gops[0].width

    def equals(self, other: "GopStream") -> bool:
        """Field-by-field equality of two streams."""
        if (self.gop_size, self.search_range, len(self.gops)) != (
            other.gop_size,
            other.search_range,
            len(other.gops),
        ):
            return False
        for mine, theirs in zip(self.gops, other.gops):
            if len(mine.pframes) != len(theirs.pframes) or not np.array_equal(mine.iframe, theirs.iframe):
                return False
            for a, b in zip(mine.pframes, theirs.pframes):
                if not (np.array_equal(a.mv, b.mv) and np.array_equal(a.residual, b.residual)):
                    return False
        return True


@dataclass(frozen=True, eq=False)
class AccumulatedFields:
    """Per-pixel displacement and residual relative to the GOP's I-frame.

    Index 0 is the I-frame itself (all zeros); index t matches frame t of the GOP.
    """

    mv: np.ndarray
    residual: np.ndarray

    @property
    def num_frames(self) -> int:
        return self.mv.shape[0]


@dataclass(frozen=True, eq=False)
class ClipSample:
    """Paired network inputs: I-frame clip (1,3,T,H,W) and MV+residual clip (1,5,T,H,W).

    MVR channel layout is [dy, dx, res_r, res_g, res_b].
    """

    rgb_clip: Tensor
    mvr_clip: Tensor
    label: int = -1

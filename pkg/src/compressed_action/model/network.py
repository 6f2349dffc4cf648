"""Two-stream network: RGB bottleneck backbone, MVR multi-scale backbone,
per-stage motion complement, cross-modal attention and three heads."""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Union

import numpy as np

from ..errors import ConfigurationError, PreconditionError
from ..tensor import ops
from ..tensor.core import Tensor
from ..tensor.params import ParamStore
from .blocks import (
    AddFusion,
    Bottleneck,
    ClassifierHead,
    CmaUnit,
    LateralFusion,
    MultiScaleBlock,
    SmcUnit,
    fuse_scores,
)
from .config import MVR_CHANNELS, RGB_CHANNELS, BottleneckConfig, ModelConfig, MsbConfig
from .layers import Conv3d

logger = logging.getLogger(__name__)

Block = Callable[[Tensor], Tensor]
Fusion = Callable[[Tensor, Tensor], Tensor]


@dataclass
class ModelOutputs:
    """Head logits of one forward pass; absent heads are ``None``."""

    z_rgb: Optional[Tensor]
    z_mvr: Optional[Tensor]
    z_fused: Optional[Tensor]
    score: Tensor


class Stream:
    """Stem followed by the stage plan, ReLU after every block."""

    def __init__(self, cfg: ModelConfig, kind: str, store: ParamStore, rng: np.random.Generator):
        plan = cfg.stages
        in_channels = RGB_CHANNELS if kind == "rgb" else MVR_CHANNELS
        self.kind = kind
        self.stem = Conv3d(
            store, f"{kind}.stem", in_channels, plan.stem_channels, (1, 3, 3), rng, stride=(1, 2, 2), padding=(0, 1, 1)
        )
        self.stages: List[List[Block]] = []
        for index, width in enumerate(plan.widths):
            blocks: List[Block] = []
            for b in range(plan.blocks[index]):
                first = b == 0
                block_in = cfg.stage_in_channels(index) if first else width
                spatial = plan.spatial_strides[index] if first else 1
                temporal = plan.temporal_strides[index] if first else 1
                path = f"{kind}.stage{index + 1}.block{b}"
                if kind == "mvr" and cfg.mvr_block == "msb":
                    msb = MsbConfig(
                        in_channels=block_in,
                        mid_channels=plan.mid(index),
                        out_channels=width,
                        spatial_stride=spatial,
                        use_dm=cfg.msb_use_dm,
                        fixed_temporal_kernel=cfg.msb_fixed_temporal_kernel,
                        cascade=cfg.msb_cascade,
                    )
                    block: Union[MultiScaleBlock, Bottleneck] = MultiScaleBlock(
                        msb, store, path, rng, temporal_stride=temporal
                    )
                else:
                    bottleneck = BottleneckConfig(
                        in_channels=block_in,
                        mid_channels=plan.mid(index),
                        out_channels=width,
                        spatial_stride=spatial,
                        use_dm=kind == "mvr" and cfg.bottleneck_dm,
                    )
                    block = Bottleneck(bottleneck, store, path, rng, temporal_stride=temporal)
                if cfg.zero_init_residual:
                    block.zero_residual()
                blocks.append(block)
            self.stages.append(blocks)

    def stem_forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.stem(x))

    def stage_forward(self, index: int, x: Tensor) -> Tensor:
        for block in self.stages[index]:
            x = ops.relu(block(x))
        return x


class TwoStreamNetwork:
    """Forward: (rgb clip, mvr clip) -> ``ModelOutputs``.

    Parameters live in ``self.params``; forward never mutates them, so one
    instance can serve concurrent inference.
    """

    def __init__(self, cfg: ModelConfig, params: ParamStore, rng: np.random.Generator):
        self.cfg = cfg
        self.params = params
        self.rgb = Stream(cfg, "rgb", params, rng) if cfg.has_rgb else None
        self.mvr = Stream(cfg, "mvr", params, rng) if cfg.has_mvr else None
        self.fusions: List[Optional[Fusion]] = []
        if cfg.two_stream:
            for index, width in enumerate(cfg.stages.widths):
                layer = index + 1
                if cfg.fusion == "smc":
                    self.fusions.append(SmcUnit(cfg.smc(index), params, f"smc{layer}", rng))
                elif cfg.fusion == "add":
                    self.fusions.append(AddFusion(layer))
                elif cfg.fusion == "lateral":
                    self.fusions.append(
                        LateralFusion(width, params, f"lateral{layer}", rng, layer, kernel=cfg.lateral_kernel)
                    )
                else:
                    self.fusions.append(None)
        self.cma = CmaUnit(cfg.cma(), params, "cma", rng) if cfg.use_cma else None
        final = cfg.final_channels
        zero = cfg.zero_init_heads
        self.head_rgb = ClassifierHead(final, cfg.num_classes, params, "head.rgb", rng, zero) if self.rgb else None
        self.head_mvr = ClassifierHead(final, cfg.num_classes, params, "head.mvr", rng, zero) if self.mvr else None
        self.head_fused = (
            ClassifierHead(cfg.key_dim, cfg.num_classes, params, "head.fused", rng, zero) if self.cma else None
        )

    def features(self, rgb: Optional[Tensor], mvr: Optional[Tensor]):
        """Final stage features of each present stream."""
        if self.rgb is not None and rgb is None:
            raise PreconditionError("model has an RGB stream but no RGB clip was given")
        if self.mvr is not None and mvr is None:
            raise PreconditionError("model has an MVR stream but no MVR clip was given")
        f_rgb = self.rgb.stem_forward(rgb) if self.rgb is not None else None
        f_mvr = self.mvr.stem_forward(mvr) if self.mvr is not None else None
        for index in range(len(self.cfg.stages.widths)):
            if f_mvr is not None:
                f_mvr = self.mvr.stage_forward(index, f_mvr)
            if f_rgb is not None:
                f_rgb = self.rgb.stage_forward(index, f_rgb)
            fusion = self.fusions[index] if self.fusions else None
            if fusion is not None:
                # only the RGB stream is modified; the MVR stream continues unchanged
                f_rgb = fusion(f_rgb, f_mvr)
        return f_rgb, f_mvr

    def forward(self, rgb: Optional[Tensor], mvr: Optional[Tensor]) -> ModelOutputs:
        f_rgb, f_mvr = self.features(rgb, mvr)
        z_rgb = self.head_rgb(f_rgb) if self.head_rgb is not None else None
        z_mvr = self.head_mvr(f_mvr) if self.head_mvr is not None else None
        z_fused = self.head_fused(self.cma(f_rgb, f_mvr)) if self.cma is not None else None
        return ModelOutputs(z_rgb=z_rgb, z_mvr=z_mvr, z_fused=z_fused, score=fuse_scores(z_rgb, z_mvr, z_fused))

    __call__ = forward

    def parameter_count(self, prefix: Optional[str] = None) -> int:
        return self.params.count(prefix)


def build_model(cfg: Union[ModelConfig, dict, None] = None, seed: Optional[int] = None) -> TwoStreamNetwork:
    """Construct the network and initialise every parameter from a seeded RNG."""
    if cfg is None:
        cfg = ModelConfig()
    elif isinstance(cfg, dict):
        cfg = ModelConfig(**cfg)
    cfg.validate_plan()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = ParamStore()
    try:
        model = TwoStreamNetwork(cfg, params, rng)
    except ValueError as e:
        if isinstance(e, ConfigurationError):
            raise
        raise ConfigurationError(f"inconsistent model plan: {e}") from e
    logger.debug("built %s model with %d parameters", cfg.streams, params.count())
    return model

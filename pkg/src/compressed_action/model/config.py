"""Structural description of the two-stream network and its blocks."""

from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..errors import ConfigurationError

Fusion = Literal["smc", "add", "lateral", "none"]
Streams = Literal["two_stream", "rgb", "mvr"]
MvrBlock = Literal["msb", "bottleneck"]
Cascade = Literal["cascaded", "literal"]

RGB_CHANNELS = 3
MVR_CHANNELS = 5  # (dy, dx) + residual RGB


class DmConfig(BaseModel):
    """Denoising module of MSB branch ``branch_index``."""

    model_config = ConfigDict(frozen=True)

    channels: int = Field(ge=1)
    branch_index: int = Field(default=2, ge=2, le=4)

    @property
    def pool_factor(self) -> int:
        return 2 ** (self.branch_index - 1)


class MsbConfig(BaseModel):
    """Multi-scale block widths and switches."""

    model_config = ConfigDict(frozen=True)

    in_channels: int = Field(ge=1)
    mid_channels: int = Field(ge=4)
    out_channels: int = Field(ge=1)
    spatial_stride: int = Field(default=1, ge=1)
    use_dm: bool = True
    fixed_temporal_kernel: bool = False
    cascade: Cascade = "cascaded"

    @field_validator("mid_channels")
    @classmethod
    def _divisible_by_four(cls, value: int) -> int:
        if value % 4:
            raise ValueError(f"mid channels {value} not divisible by 4")
        return value

    @property
    def branch_channels(self) -> int:
        return self.mid_channels // 4

    def temporal_kernel(self, branch_index: int) -> int:
        """Temporal extent of ST_i: 2i-3, or 3 for every branch when fixed."""
        return 3 if self.fixed_temporal_kernel else 2 * branch_index - 3

    def dm(self, branch_index: int) -> DmConfig:
        return DmConfig(channels=self.branch_channels, branch_index=branch_index)


class BottleneckConfig(BaseModel):
    """Plain residual bottleneck: (3,1,1) -> (1,3,3) -> (1,1,1)."""

    model_config = ConfigDict(frozen=True)

    in_channels: int = Field(ge=1)
    mid_channels: int = Field(ge=1)
    out_channels: int = Field(ge=1)
    spatial_stride: int = Field(default=1, ge=1)
    use_dm: bool = False


class SmcConfig(BaseModel):
    """Selective motion complement after stage ``layer``."""

    model_config = ConfigDict(frozen=True)

    layer: int = Field(ge=1)
    channels: int = Field(ge=1)
    ratio: int = Field(default=16, ge=1)
    channel_kernel: int = Field(default=3, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "SmcConfig":
        if self.channels % self.ratio:
            raise ValueError(f"SMC layer {self.layer}: {self.channels} channels not divisible by ratio {self.ratio}")
        if self.channel_kernel % 2 == 0:
            raise ValueError(f"SMC layer {self.layer}: channel kernel must be odd, got {self.channel_kernel}")
        return self

    @property
    def hidden_channels(self) -> int:
        return self.channels // self.ratio


class CmaConfig(BaseModel):
    """Cross-modality augment projection widths."""

    model_config = ConfigDict(frozen=True)

    channels: int = Field(ge=1)
    key_dim: int = Field(ge=1)


class StagePlan(BaseModel):
    """Backbone stages shared by both streams."""

    model_config = ConfigDict(frozen=True)

    stem_channels: int = 16
    widths: Tuple[int, ...] = (16, 32, 64, 128)
    blocks: Tuple[int, ...] = (1, 1, 1, 1)
    spatial_strides: Tuple[int, ...] = (1, 2, 2, 2)
    temporal_strides: Tuple[int, ...] = (1, 1, 1, 1)
    bottleneck_ratio: int = 4

    def mid(self, stage: int) -> int:
        return self.widths[stage] // self.bottleneck_ratio


class ModelConfig(BaseModel):
    """Everything needed to rebuild a network and its parameter paths."""

    model_config = ConfigDict(frozen=True)

    num_classes: int = Field(default=5, ge=2)
    stages: StagePlan = StagePlan()
    streams: Streams = "two_stream"
    mvr_block: MvrBlock = "msb"
    msb_use_dm: bool = True
    msb_fixed_temporal_kernel: bool = False
    msb_cascade: Cascade = "cascaded"
    bottleneck_dm: bool = False
    fusion: Fusion = "smc"
    smc_ratio: int = 16
    lateral_kernel: int = 5
    use_cma: bool = True
    cma_key_dim: Optional[int] = None
    zero_init_heads: bool = False
    zero_init_residual: bool = True
    seed: int = 0

    @property
    def has_rgb(self) -> bool:
        return self.streams in ("two_stream", "rgb")

    @property
    def has_mvr(self) -> bool:
        return self.streams in ("two_stream", "mvr")

    @property
    def two_stream(self) -> bool:
        return self.streams == "two_stream"

    @property
    def final_channels(self) -> int:
        return self.stages.widths[-1]

    @property
    def key_dim(self) -> int:
        return self.cma_key_dim or max(1, self.final_channels // 16)

    def validate_plan(self) -> None:
        plan = self.stages
        count = len(plan.widths)
        if count == 0:
            raise ConfigurationError("stage plan has no stages")
        for name in ("blocks", "spatial_strides", "temporal_strides"):
            if len(getattr(plan, name)) != count:
                entries = len(getattr(plan, name))
                raise ConfigurationError(f"stage plan: {name} has {entries} entries for {count} stages")
        for index, width in enumerate(plan.widths):
            stage = index + 1
            if plan.blocks[index] < 1:
                raise ConfigurationError(f"stage {stage}: needs at least one block")
            if plan.spatial_strides[index] < 1 or plan.temporal_strides[index] < 1:
                raise ConfigurationError(f"stage {stage}: strides must be >= 1")
            if width % plan.bottleneck_ratio:
                raise ConfigurationError(f"stage {stage}: width {width} not divisible by {plan.bottleneck_ratio}")
            if self.mvr_block == "msb" and self.has_mvr and plan.mid(index) % 4:
                raise ConfigurationError(
                    f"stage {stage}: MSB mid width {plan.mid(index)} not divisible into four branches"
                )
            if self.two_stream and self.fusion == "smc" and width % self.smc_ratio:
                raise ConfigurationError(f"stage {stage}: width {width} not divisible by SMC ratio {self.smc_ratio}")
        if self.lateral_kernel % 2 == 0:
            raise ConfigurationError(f"lateral kernel must be odd, got {self.lateral_kernel}")
        if not self.two_stream and (self.use_cma or self.fusion != "none"):
            raise ConfigurationError(f"single-stream model '{self.streams}' cannot use fusion or CMA")

    def smc(self, stage: int) -> SmcConfig:
        return SmcConfig(layer=stage + 1, channels=self.stages.widths[stage], ratio=self.smc_ratio)

    def cma(self) -> CmaConfig:
        return CmaConfig(channels=self.final_channels, key_dim=self.key_dim)

    def stage_in_channels(self, stage: int) -> int:
        return self.stages.stem_channels if stage == 0 else self.stages.widths[stage - 1]

    def to_text(self) -> dict:
        """Flat dotted view for structured-text headers."""
        flat = {}
        for key, value in self.model_dump(mode="json").items():
            if isinstance(value, dict):
                for sub, inner in value.items():
                    flat[f"{key}.{sub}"] = inner
            else:
                flat[key] = value
        return flat

    @classmethod
    def from_text(cls, flat: dict) -> "ModelConfig":
        nested: dict = {}
        for key, value in flat.items():
            head, _, tail = key.partition(".")
            if tail:
                nested.setdefault(head, {})[tail] = value
            else:
                nested[head] = value
        stages = nested.get("stages")
        if isinstance(stages, dict):
            for name, value in list(stages.items()):
                if isinstance(value, (int, float)) and name != "stem_channels" and name != "bottleneck_ratio":
                    stages[name] = (value,)
        return cls(**nested)

"""Network units: denoising module, multi-scale block, bottleneck,
cross-modal fusion units, classifier heads and score fusion.

Every unit registers its parameters under a dotted path prefix at
construction and is a pure function of its inputs afterwards.
"""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from ..errors import ConfigurationError, DimensionError, PreconditionError
from ..tensor import ops
from ..tensor.core import Tensor
from ..tensor.params import ParamStore
from .config import BottleneckConfig, CmaConfig, DmConfig, MsbConfig, SmcConfig
from .layers import Conv3d, Linear

logger = logging.getLogger(__name__)


class DenoisingModule:
    """sigmoid(T + S) * X with a temporal-average term T and a smoothed spatial term S."""

    def __init__(self, cfg: DmConfig, store: ParamStore, path: str, rng: np.random.Generator):
        self.cfg = cfg
        self.conv = Conv3d(store, f"{path}.conv", cfg.channels, cfg.channels, (1, 3, 3), rng)

    def temporal_term(self, x: Tensor) -> Tensor:
        return ops.resize(ops.pool(x, "avg_temporal_global"), "repeat_temporal", x.shape[2])

    def spatial_term(self, x: Tensor) -> Tensor:
        """(N, C, 1, H, W); broadcasts over time."""
        pooled = ops.pool(ops.pool(x, "avg_temporal_global"), "avg_spatial", self.cfg.pool_factor)
        return ops.resize(self.conv(pooled), "bilinear_spatial", x.shape[3:])

    def mask(self, x: Tensor) -> Tensor:
        return ops.sigmoid(ops.add(self.temporal_term(x), self.spatial_term(x)))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 5:
            raise DimensionError(f"denoising module input must be 5-D, got shape {x.shape}")
        if x.shape[1] != self.cfg.channels:
            raise DimensionError(f"channel axis: input has {x.shape[1]} channels, module expects {self.cfg.channels}")
        return ops.mul(self.mask(x), x)


def _shortcut(
    store: ParamStore,
    path: str,
    in_channels: int,
    out_channels: int,
    stride: Tuple[int, int, int],
    rng: np.random.Generator,
) -> Optional[Conv3d]:
    if in_channels == out_channels and stride == (1, 1, 1):
        return None
    return Conv3d(store, f"{path}.shortcut", in_channels, out_channels, 1, rng, stride=stride, padding=0)


class MultiScaleBlock:
    """Entry 1x1x1 conv, four-way channel split, cascaded ST branches, 1x1x1 fusion, residual."""

    def __init__(
        self,
        cfg: MsbConfig,
        store: ParamStore,
        path: str,
        rng: np.random.Generator,
        temporal_stride: int = 1,
    ):
        self.cfg = cfg
        stride = (temporal_stride, cfg.spatial_stride, cfg.spatial_stride)
        width = cfg.branch_channels
        self.entry = Conv3d(store, f"{path}.entry", cfg.in_channels, cfg.mid_channels, 1, rng, stride=stride)
        self.dms: List[Optional[DenoisingModule]] = []
        self.spatial: List[Conv3d] = []
        self.temporal: List[Conv3d] = []
        for i in (2, 3, 4):
            prefix = f"{path}.branch{i}"
            dm = DenoisingModule(cfg.dm(i), store, f"{prefix}.dm", rng) if cfg.use_dm else None
            self.dms.append(dm)
            self.spatial.append(Conv3d(store, f"{prefix}.spatial", width, width, (1, 3, 3), rng))
            self.temporal.append(Conv3d(store, f"{prefix}.temporal", width, width, (cfg.temporal_kernel(i), 1, 1), rng))
        self.fuse = Conv3d(store, f"{path}.fuse", cfg.mid_channels, cfg.out_channels, 1, rng)
        self.shortcut = _shortcut(store, path, cfg.in_channels, cfg.out_channels, stride, rng)

    def branch(self, i: int, x: Tensor) -> Tensor:
        """ST_i(DM(x)) for i in 2..4."""
        k = i - 2
        dm = self.dms[k]
        if dm is not None:
            x = dm(x)
        return self.temporal[k](self.spatial[k](x))

    def zero_residual(self) -> None:
        """Start the block as its shortcut alone."""
        self.fuse.weight.data[...] = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cfg.in_channels:
            raise DimensionError(f"channel axis: input has {x.shape[1]} channels, block expects {self.cfg.in_channels}")
        parts = ops.split(self.entry(x), 4, axis=1)
        outputs = [parts[0]]
        for i in (2, 3, 4):
            branch_in = parts[i - 1]
            if i > 2:
                if self.cfg.cascade == "cascaded":
                    previous = outputs[-1]
                else:
                    previous = self.branch(i - 1, parts[i - 2])
                branch_in = ops.add(branch_in, previous)
            outputs.append(self.branch(i, branch_in))
        z = self.fuse(ops.concat(outputs, axis=1))
        identity = x if self.shortcut is None else self.shortcut(x)
        return ops.add(z, identity)


class Bottleneck:
    """(3,1,1) -> ReLU -> (1,3,3) [-> DM] -> ReLU -> (1,1,1), plus residual."""

    def __init__(
        self,
        cfg: BottleneckConfig,
        store: ParamStore,
        path: str,
        rng: np.random.Generator,
        temporal_stride: int = 1,
    ):
        self.cfg = cfg
        self.conv_a = Conv3d(
            store, f"{path}.conv_a", cfg.in_channels, cfg.mid_channels, (3, 1, 1), rng, stride=(temporal_stride, 1, 1)
        )
        self.conv_b = Conv3d(
            store,
            f"{path}.conv_b",
            cfg.mid_channels,
            cfg.mid_channels,
            (1, 3, 3),
            rng,
            stride=(1, cfg.spatial_stride, cfg.spatial_stride),
        )
        self.dm = (
            DenoisingModule(DmConfig(channels=cfg.mid_channels, branch_index=2), store, f"{path}.dm", rng)
            if cfg.use_dm
            else None
        )
        self.conv_c = Conv3d(store, f"{path}.conv_c", cfg.mid_channels, cfg.out_channels, 1, rng)
        stride = (temporal_stride, cfg.spatial_stride, cfg.spatial_stride)
        self.shortcut = _shortcut(store, path, cfg.in_channels, cfg.out_channels, stride, rng)

    def zero_residual(self) -> None:
        self.conv_c.weight.data[...] = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cfg.in_channels:
            raise DimensionError(f"channel axis: input has {x.shape[1]} channels, block expects {self.cfg.in_channels}")
        h = self.conv_b(ops.relu(self.conv_a(x)))
        if self.dm is not None:
            h = self.dm(h)
        z = self.conv_c(ops.relu(h))
        identity = x if self.shortcut is None else self.shortcut(x)
        return ops.add(z, identity)


def _require_same_shape(f_rgb: Tensor, f_mvr: Tensor, unit: str) -> None:
    if f_rgb.shape != f_mvr.shape:
        raise ConfigurationError(f"{unit}: RGB feature {f_rgb.shape} and MVR feature {f_mvr.shape} differ")


class SmcUnit:
    """Selective motion complement: attended MVR features added to the RGB stream."""

    def __init__(self, cfg: SmcConfig, store: ParamStore, path: str, rng: np.random.Generator):
        self.cfg = cfg
        self.conv0 = Conv3d(store, f"{path}.att_sp.conv0", cfg.channels, cfg.hidden_channels, 1, rng)
        self.conv1 = Conv3d(store, f"{path}.att_sp.conv1", cfg.hidden_channels, cfg.channels, 1, rng)
        # one input and one output channel sliding along the channel axis
        self.att_c = Conv3d(
            store, f"{path}.att_c", 1, 1, (cfg.channel_kernel, 1, 1), rng, padding=(cfg.channel_kernel // 2, 0, 0)
        )

    def motion_feature(self, f_mvr: Tensor) -> Tensor:
        """F'_P = F_P * sigmoid(Att_SP(MP(F_P)))."""
        attention = self.conv1(ops.relu(self.conv0(ops.pool(f_mvr, "max3d_same"))))
        return ops.mul(f_mvr, ops.sigmoid(attention))

    def channel_weights(self, motion: Tensor) -> Tensor:
        """(N, C, 1, 1, 1) weights from the globally max-pooled descriptor."""
        n, c = motion.shape[:2]
        descriptor = ops.reshape(ops.pool(motion, "max_global"), (n, 1, c, 1, 1))
        return ops.reshape(ops.sigmoid(self.att_c(descriptor)), (n, c, 1, 1, 1))

    def __call__(self, f_rgb: Tensor, f_mvr: Tensor) -> Tensor:
        _require_same_shape(f_rgb, f_mvr, f"SMC layer {self.cfg.layer}")
        if f_rgb.shape[1] != self.cfg.channels:
            raise ConfigurationError(
                f"SMC layer {self.cfg.layer}: expects {self.cfg.channels} channels, got {f_rgb.shape[1]}"
            )
        motion = self.motion_feature(f_mvr)
        return ops.add(f_rgb, ops.mul(motion, self.channel_weights(motion)))


class AddFusion:
    """F_I + F_P: SMC with every attention weight fixed to one."""

    def __init__(self, layer: int):
        self.layer = layer

    def __call__(self, f_rgb: Tensor, f_mvr: Tensor) -> Tensor:
        _require_same_shape(f_rgb, f_mvr, f"add fusion layer {self.layer}")
        return ops.add(f_rgb, f_mvr)


class LateralFusion:
    """F_I + Conv_{k x 1 x 1}(F_P), a lateral connection from the motion stream."""

    def __init__(
        self,
        channels: int,
        store: ParamStore,
        path: str,
        rng: np.random.Generator,
        layer: int,
        kernel: int = 5,
    ):
        self.layer = layer
        self.conv = Conv3d(store, f"{path}.conv", channels, channels, (kernel, 1, 1), rng)

    def __call__(self, f_rgb: Tensor, f_mvr: Tensor) -> Tensor:
        _require_same_shape(f_rgb, f_mvr, f"lateral fusion layer {self.layer}")
        return ops.add(f_rgb, self.conv(f_mvr))


class CmaUnit:
    """Non-local cross attention between the two streams' final features."""

    MODALITIES = ("rgb", "mvr")

    def __init__(self, cfg: CmaConfig, store: ParamStore, path: str, rng: np.random.Generator):
        self.cfg = cfg
        self.proj = {
            f"{role}_{m}": Conv3d(store, f"{path}.{role}_{m}", cfg.channels, cfg.key_dim, 1, rng)
            for role in ("k", "q", "v")
            for m in self.MODALITIES
        }

    def _sequence(self, name: str, x: Tensor) -> Tensor:
        """Project and flatten to (N, L, d_k)."""
        y = self.proj[name](x)
        n, d = y.shape[:2]
        return ops.transpose(ops.reshape(y, (n, d, -1)), (0, 2, 1))

    def _attention(self, query: Tensor, key: Tensor) -> Tensor:
        logits = ops.matmul_batched(query, ops.transpose(key, (0, 2, 1)))
        return ops.softmax(ops.scale(logits, 1.0 / math.sqrt(self.cfg.key_dim)), axis=-1)

    def attention_maps(self, f_rgb: Tensor, f_mvr: Tensor) -> Tuple[np.ndarray, np.ndarray]:
        """(A_I, A_P): softmax(Q_P K_I^T / sqrt d) and softmax(Q_I K_P^T / sqrt d)."""
        self._check(f_rgb, f_mvr)
        a_rgb = self._attention(self._sequence("q_mvr", f_mvr), self._sequence("k_rgb", f_rgb))
        a_mvr = self._attention(self._sequence("q_rgb", f_rgb), self._sequence("k_mvr", f_mvr))
        return a_rgb.numpy(), a_mvr.numpy()

    def _check(self, f_rgb: Tensor, f_mvr: Tensor) -> None:
        _require_same_shape(f_rgb, f_mvr, "CMA")
        if f_rgb.shape[1] != self.cfg.channels:
            raise DimensionError(f"channel axis: CMA expects {self.cfg.channels} channels, got {f_rgb.shape[1]}")

    def __call__(self, f_rgb: Tensor, f_mvr: Tensor) -> Tensor:
        self._check(f_rgb, f_mvr)
        n, _, t, h, w = f_rgb.shape
        attended_rgb = ops.matmul_batched(
            self._attention(self._sequence("q_mvr", f_mvr), self._sequence("k_rgb", f_rgb)),
            self._sequence("v_rgb", f_rgb),
        )
        attended_mvr = ops.matmul_batched(
            self._attention(self._sequence("q_rgb", f_rgb), self._sequence("k_mvr", f_mvr)),
            self._sequence("v_mvr", f_mvr),
        )
        fused = ops.transpose(ops.add(attended_rgb, attended_mvr), (0, 2, 1))
        return ops.reshape(fused, (n, self.cfg.key_dim, t, h, w))


class ClassifierHead:
    """Global average pool over (T, H, W) followed by one affine map."""

    def __init__(
        self,
        in_features: int,
        num_classes: int,
        store: ParamStore,
        path: str,
        rng: np.random.Generator,
        zero_init: bool = False,
    ):
        self.in_features = in_features
        self.fc = Linear(store, path, in_features, num_classes, rng, zero_init=zero_init)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 5:
            raise DimensionError(f"classifier head input must be 5-D, got shape {x.shape}")
        if x.shape[1] != self.in_features:
            raise DimensionError(f"feature axis: head width {self.in_features} vs {x.shape[1]} channels")
        pooled = ops.pool(x, "avg_global")
        return self.fc(ops.reshape(pooled, x.shape[:2]))


def fuse_scores(*logits: Optional[Tensor]) -> Tensor:
    """Arithmetic mean of the given head logits; ``None`` heads are skipped."""
    present = [z for z in logits if z is not None]
    if not present:
        raise PreconditionError("score fusion needs at least one head")
    for z in present[1:]:
        if z.shape != present[0].shape:
            raise DimensionError(f"class axis: logits {present[0].shape} and {z.shape} differ")
    return present[0] if len(present) == 1 else ops.average(present)

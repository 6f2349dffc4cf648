"""Parameterised layers registered in a ``ParamStore``."""

import math
from typing import Optional, Sequence, Union

import numpy as np

from ..tensor import ops
from ..tensor.core import Tensor
from ..tensor.params import ParamStore

Extent = Union[int, Sequence[int]]


def _triple(value: Extent) -> tuple:
    return (value,) * 3 if isinstance(value, int) else tuple(value)


def kaiming_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    """U(-b, b) with b = sqrt(6 / fan_in)."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))


class Conv3d:
    """3-D convolution with weight ``<path>.weight`` and bias ``<path>.bias``."""

    def __init__(
        self,
        store: ParamStore,
        path: str,
        in_channels: int,
        out_channels: int,
        kernel: Extent,
        rng: np.random.Generator,
        stride: Extent = 1,
        padding: Optional[Extent] = None,
        bias: bool = True,
    ):
        self.kernel = _triple(kernel)
        self.stride = _triple(stride)
        # default padding keeps odd kernels shape-preserving at stride 1
        self.padding = _triple(padding) if padding is not None else tuple(k // 2 for k in self.kernel)
        fan_in = in_channels * int(np.prod(self.kernel))
        self.weight = store.register(
            f"{path}.weight", kaiming_uniform(rng, (out_channels, in_channels) + self.kernel, fan_in)
        )
        self.bias = store.register(f"{path}.bias", np.zeros(out_channels)) if bias else None
        self.path = path

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv3d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear:
    """Affine map of (N, C) features to (N, K)."""

    def __init__(
        self,
        store: ParamStore,
        path: str,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        zero_init: bool = False,
    ):
        if zero_init:
            weight = np.zeros((out_features, in_features))
        else:
            weight = kaiming_uniform(rng, (out_features, in_features), in_features)
        self.weight = store.register(f"{path}.weight", weight)
        self.bias = store.register(f"{path}.bias", np.zeros(out_features))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.affine(x, self.weight, self.bias)

"""Gradient-check suite over every network unit at reduced widths."""

import logging
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from ..model.blocks import ClassifierHead, CmaUnit, DenoisingModule, MultiScaleBlock, SmcUnit
from ..model.config import CmaConfig, DmConfig, ModelConfig, MsbConfig, SmcConfig, StagePlan
from ..model.network import build_model
from ..tensor import ops
from ..tensor.core import Tensor
from ..tensor.gradcheck import grad_check
from ..tensor.params import ParamStore

logger = logging.getLogger(__name__)

Fixture = Tuple[Callable[[], Tensor], ParamStore]

SUITE = ("dm", "msb", "smc", "cma", "head", "network")
TOLERANCE = 1e-4


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    """sum(out * R): a scalar whose gradient reaches every output element."""
    return ops.reduce_sum(ops.mul(out, Tensor(weights)))


def _offset_biases(store: ParamStore, rng: np.random.Generator) -> None:
    """Draw every bias from +-[0.05, 0.25].

    Zero biases put the pre-activations of dead units exactly on the ReLU
    kink, where central differences are one-sided.
    """
    for path, tensor in store.items():
        if path.endswith(".bias"):
            magnitude = rng.uniform(0.05, 0.25, size=tensor.shape)
            tensor.data[...] = magnitude * rng.choice([-1.0, 1.0], size=tensor.shape)


def _fixture(build: Callable[[ParamStore, np.random.Generator], Callable[[], Tensor]], seed: int) -> Fixture:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    forward = build(store, rng)
    _offset_biases(store, rng)
    weights = rng.normal(size=forward().shape)
    return (lambda: _weighted_sum(forward(), weights)), store


def dm_fixture(seed: int = 0) -> Fixture:
    def build(store, rng):
        dm = DenoisingModule(DmConfig(channels=3, branch_index=3), store, "dm", rng)
        x = store.register("input.x", rng.normal(size=(2, 3, 3, 5, 6)))
        return lambda: dm(x)

    return _fixture(build, seed)


def msb_fixture(seed: int = 0, cascade: str = "cascaded", fixed: bool = False) -> Fixture:
    def build(store, rng):
        cfg = MsbConfig(
            in_channels=4,
            mid_channels=8,
            out_channels=6,
            spatial_stride=2,
            fixed_temporal_kernel=fixed,
            cascade=cascade,
        )
        block = MultiScaleBlock(cfg, store, "msb", rng)
        x = store.register("input.x", rng.normal(size=(1, 4, 5, 6, 6)))
        return lambda: block(x)

    return _fixture(build, seed)


def smc_fixture(seed: int = 0) -> Fixture:
    def build(store, rng):
        smc = SmcUnit(SmcConfig(layer=1, channels=8, ratio=4), store, "smc1", rng)
        f_rgb = store.register("input.rgb", rng.normal(size=(2, 8, 3, 4, 4)))
        f_mvr = store.register("input.mvr", rng.normal(size=(2, 8, 3, 4, 4)))
        return lambda: smc(f_rgb, f_mvr)

    return _fixture(build, seed)


def cma_fixture(seed: int = 0) -> Fixture:
    def build(store, rng):
        cma = CmaUnit(CmaConfig(channels=6, key_dim=4), store, "cma", rng)
        f_rgb = store.register("input.rgb", rng.normal(size=(2, 6, 2, 3, 2)))
        f_mvr = store.register("input.mvr", rng.normal(size=(2, 6, 2, 3, 2)))
        return lambda: cma(f_rgb, f_mvr)

    return _fixture(build, seed)


def head_fixture(seed: int = 0) -> Fixture:
    def build(store, rng):
        head = ClassifierHead(6, 5, store, "head", rng)
        x = store.register("input.x", rng.normal(size=(3, 6, 2, 3, 3)))
        return lambda: head(x)

    return _fixture(build, seed)


def reduced_model_config(**changes) -> ModelConfig:
    """Four 16-wide stages; small enough for finite differences over every path."""
    plan = StagePlan(stem_channels=8, widths=(16, 16, 16, 16), spatial_strides=(1, 2, 1, 2))
    return ModelConfig(stages=plan, **changes)


def network_fixture(seed: int = 0) -> Fixture:
    rng = np.random.default_rng(seed)
    model = build_model(reduced_model_config(seed=seed, zero_init_residual=False))
    _offset_biases(model.params, rng)
    rgb = Tensor(rng.normal(size=(2, 3, 4, 8, 8)))
    mvr = Tensor(rng.normal(size=(2, 5, 4, 8, 8)))
    weights = rng.normal(size=(2, model.cfg.num_classes))
    return (lambda: _weighted_sum(model.forward(rgb, mvr).score, weights)), model.params


FIXTURES: Dict[str, Callable[[int], Fixture]] = {
    "dm": dm_fixture,
    "msb": msb_fixture,
    "smc": smc_fixture,
    "cma": cma_fixture,
    "head": head_fixture,
    "network": network_fixture,
}


def run_grad_checks(
    eps: float = 1e-5,
    samples_per_param: int = 4,
    seed: int = 0,
    blocks: Optional[Sequence[str]] = None,
) -> Dict[str, float]:
    """Max relative error per unit."""
    results: Dict[str, float] = {}
    for name in blocks or SUITE:
        graph, store = FIXTURES[name](seed)
        results[name] = grad_check(graph, store, eps=eps, samples_per_param=samples_per_param, seed=seed)
        logger.debug("grad-check %s: %.3e", name, results[name])
    return results

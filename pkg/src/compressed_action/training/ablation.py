"""Ablation harness: named model variants trained under one shared budget."""

import csv
import logging
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

from pydantic import BaseModel

from ..errors import ConfigurationError
from ..model.config import ModelConfig
from ..model.network import build_model
from .trainer import TrainConfig, train

logger = logging.getLogger(__name__)

Transform = Callable[[ModelConfig], ModelConfig]


def _update(**changes) -> Transform:
    return lambda base: base.model_copy(update=changes)


_SINGLE = dict(fusion="none", use_cma=False)
_CME = dict(mvr_block="msb", msb_use_dm=True, msb_fixed_temporal_kernel=False, bottleneck_dm=False)

VARIANTS: Dict[str, Transform] = {
    # modalities
    "rgb-only": _update(streams="rgb", **_SINGLE),
    "mvr-only": _update(streams="mvr", **_CME, **_SINGLE),
    "full": _update(streams="two_stream", **_CME, fusion="smc", use_cma=True),
    # motion network
    "B1": _update(streams="mvr", mvr_block="bottleneck", bottleneck_dm=False, **_SINGLE),
    "B1+MSB": _update(streams="mvr", mvr_block="msb", msb_use_dm=False, msb_fixed_temporal_kernel=False, **_SINGLE),
    "B1+MSB*": _update(streams="mvr", mvr_block="msb", msb_use_dm=False, msb_fixed_temporal_kernel=True, **_SINGLE),
    "B1+DM": _update(streams="mvr", mvr_block="bottleneck", bottleneck_dm=True, **_SINGLE),
    "CME": _update(streams="mvr", **_CME, **_SINGLE),
    # cross-modal interaction
    "B2": _update(streams="two_stream", **_CME, fusion="none", use_cma=False),
    "B2+Add": _update(streams="two_stream", **_CME, fusion="add", use_cma=False),
    "B2+LA": _update(streams="two_stream", **_CME, fusion="lateral", use_cma=False),
    "B2+SMC": _update(streams="two_stream", **_CME, fusion="smc", use_cma=False),
    "B2+CMA": _update(streams="two_stream", **_CME, fusion="none", use_cma=True),
}

TABLES: Dict[str, List[str]] = {
    "modality": ["rgb-only", "mvr-only", "full"],
    "cme": ["B1", "B1+MSB", "B1+MSB*", "B1+DM", "CME"],
    "aci": ["B2", "B2+Add", "B2+LA", "B2+SMC", "B2+CMA", "full"],
}

CSV_HEADER = ("variant", "seed", "params", "params_m", "top1", "top1_rgb", "top1_mvr", "seconds")


class AblationRow(BaseModel):
    variant: str
    seed: int
    params: int
    top1: float
    top1_rgb: Optional[float] = None
    top1_mvr: Optional[float] = None
    seconds: float

    def as_csv(self) -> List[str]:
        def fmt(value: Optional[float]) -> str:
            return "" if value is None else f"{value:.4f}"

        return [
            self.variant,
            str(self.seed),
            str(self.params),
            f"{self.params / 1e6:.4f}",
            fmt(self.top1),
            fmt(self.top1_rgb),
            fmt(self.top1_mvr),
            f"{self.seconds:.2f}",
        ]


def ablation_train_config() -> TrainConfig:
    """Toy budget: 30 epochs, batch 8, lr divided by ten at epoch 20.

    The rate is raised above the fine-tuning default because every variant
    trains from scratch.
    """
    return TrainConfig(lr=0.01, epochs=30, lr_decay_epochs=(20,), batch_size=8)


def resolve_variants(names: Sequence[str]) -> List[str]:
    """Expand table names and check variant names; unknown names list the valid ones."""
    resolved: List[str] = []
    for name in names:
        expanded = TABLES.get(name, [name])
        for variant in expanded:
            if variant not in VARIANTS:
                valid = ", ".join(list(VARIANTS) + list(TABLES))
                raise ConfigurationError(f"unknown ablation variant '{variant}' (valid: {valid})")
            if variant not in resolved:
                resolved.append(variant)
    return resolved


def variant_config(name: str, base: Optional[ModelConfig] = None, seed: int = 0) -> ModelConfig:
    resolve_variants([name])
    config = VARIANTS[name](base or ModelConfig())
    return config.model_copy(update={"seed": seed})


def run_ablation(
    variants: Sequence[str],
    root: Union[str, Path],
    train_cfg: Optional[TrainConfig] = None,
    base: Optional[ModelConfig] = None,
    seeds: Sequence[int] = (0,),
    out_csv: Optional[Union[str, Path]] = None,
) -> List[AblationRow]:
    """Train every variant for every seed with an identical budget and report test top-1."""
    names = resolve_variants(variants)
    train_cfg = train_cfg or ablation_train_config()
    rows: List[AblationRow] = []
    for seed in seeds:
        for name in names:
            started = time.perf_counter()
            model = build_model(variant_config(name, base, seed))
            metrics = train(model, root, train_cfg.model_copy(update={"seed": seed}))
            test = metrics.test
            row = AblationRow(
                variant=name,
                seed=seed,
                params=model.params.count(),
                top1=test.top1 if test else 0.0,
                top1_rgb=test.top1_rgb if test else None,
                top1_mvr=test.top1_mvr if test else None,
                seconds=time.perf_counter() - started,
            )
            rows.append(row)
            logger.info("ablation %s seed=%d params=%d top1=%.4f", name, seed, row.params, row.top1)
    if out_csv is not None:
        write_ablation_csv(out_csv, rows)
    return rows


def write_ablation_csv(path: Union[str, Path], rows: Sequence[AblationRow]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(row.as_csv())

"""SGD training loop with step-decayed learning rate and per-epoch metrics."""

import logging
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..config.manager import format_structured_text, parse_structured_text
from ..errors import ConfigurationError, DatasetError, TrainingDivergedError
from ..model.checkpoint import save_checkpoint
from ..model.network import ModelOutputs, TwoStreamNetwork
from ..tensor import ops
from ..tensor.core import Tensor
from ..tensor.params import ParamStore
from .dataset import InputStats, VideoDataset, collate, compute_input_stats
from .evaluate import EvalResult, evaluate

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    """Optimizer, schedule and clip settings."""

    model_config = ConfigDict(frozen=True)

    lr: float = Field(default=1e-4, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)
    batch_size: int = Field(default=8, ge=1)
    epochs: int = Field(default=30, ge=1)
    lr_decay_epochs: Tuple[int, ...] = (20,)
    lr_decay_factor: float = Field(default=10.0, gt=0.0)
    supervise_streams: bool = True
    n_frames: int = Field(default=8, ge=1)
    crop: Tuple[int, int] = (48, 48)
    seed: int = 0
    threads: int = Field(default=1, ge=1)
    freeze: Tuple[str, ...] = ()

    @field_validator("lr_decay_epochs")
    @classmethod
    def _increasing(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(b <= a for a, b in zip(value, value[1:])) or any(v < 1 for v in value):
            raise ValueError(f"decay epochs must be positive and strictly increasing, got {value}")
        return value

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``: divided by the factor at every boundary reached."""
        drops = sum(1 for boundary in self.lr_decay_epochs if epoch >= boundary)
        return self.lr / (self.lr_decay_factor**drops)


class EpochRecord(BaseModel):
    epoch: int = Field(ge=0)
    lr: float
    train_loss: float
    train_top1: float = Field(ge=0.0, le=1.0)
    val_top1: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    seconds: float = Field(ge=0.0)


class Metrics(BaseModel):
    """Per-epoch records plus final test accuracy."""

    epochs: List[EpochRecord] = []
    test: Optional[EvalResult] = None

    @model_validator(mode="after")
    def _monotone(self) -> "Metrics":
        indices = [r.epoch for r in self.epochs]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError(f"epoch indices must increase, got {indices}")
        return self


class SGD:
    """Momentum SGD with L2 weight decay added to the gradient.

    v <- mu * v + (g + wd * theta);  theta <- theta - lr * v
    """

    def __init__(self, params: ParamStore, lr: float, momentum: float = 0.9, weight_decay: float = 1e-4):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self) -> None:
        for path, tensor in self.params.trainable_items():
            grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            grad = grad + self.weight_decay * tensor.data
            velocity = self.velocity.get(path)
            velocity = grad if velocity is None else self.momentum * velocity + grad
            self.velocity[path] = velocity
            tensor.data -= self.lr * velocity

    def zero_grad(self) -> None:
        self.params.zero_grad()


def compute_loss(outputs: ModelOutputs, labels: Sequence[int], supervise_streams: bool = True) -> Tensor:
    """Mean cross-entropy over the fused score and, optionally, the stream heads."""
    terms = [outputs.score]
    if supervise_streams:
        # z_fused reaches the loss through the score only
        for head in (outputs.z_rgb, outputs.z_mvr):
            if head is not None and head is not outputs.score:
                terms.append(head)
    losses = [ops.cross_entropy(z, labels) for z in terms]
    return ops.average(losses) if len(losses) > 1 else losses[0]


def train_step(
    model: TwoStreamNetwork,
    optimizer: SGD,
    rgb: Tensor,
    mvr: Tensor,
    labels: np.ndarray,
    supervise_streams: bool = True,
) -> Tuple[float, np.ndarray]:
    """One forward/backward/update; returns the loss and the batch's fused logits."""
    outputs = model.forward(rgb, mvr)
    loss = compute_loss(outputs, labels, supervise_streams)
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingDivergedError(
            f"loss became {value} at learning rate {optimizer.lr:g}; lower the learning rate and retry"
        )
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return value, outputs.score.data


def append_epoch_record(path: Union[str, Path], record: EpochRecord) -> None:
    """Append one blank-line-terminated block of key=value lines."""
    with open(path, "a") as handle:
        handle.write(format_structured_text(record.model_dump()) + "\n")


def read_metrics_log(path: Union[str, Path]) -> List[EpochRecord]:
    blocks = Path(path).read_text().split("\n\n")
    return [EpochRecord(**parse_structured_text(block, str(path))) for block in blocks if block.strip()]


def train(
    model: TwoStreamNetwork,
    root: Union[str, Path],
    cfg: Optional[TrainConfig] = None,
    checkpoint: Optional[Union[str, Path]] = None,
    metrics_log: Optional[Union[str, Path]] = None,
) -> Metrics:
    """Train on the ``train`` split, validate each epoch, test once and write the checkpoint."""
    cfg = cfg or TrainConfig()
    train_set = VideoDataset(root, "train")
    if len(train_set) == 0:
        raise DatasetError(f"training split of {root} is empty")
    if train_set.num_classes != model.cfg.num_classes:
        raise ConfigurationError(
            f"model predicts {model.cfg.num_classes} classes but the dataset has {train_set.num_classes}"
        )
    val_set = VideoDataset(root, "val")
    test_set = VideoDataset(root, "test")
    if len(val_set) == 0:
        logger.warning("validation split is empty; val_top1 will not be recorded")

    for prefix in cfg.freeze:
        logger.info("freezing %d parameter tensors below %s", model.params.freeze(prefix), prefix)
    stats = compute_input_stats(train_set)
    optimizer = SGD(model.params, cfg.lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    metrics = Metrics()
    if metrics_log is not None:
        Path(metrics_log).write_text("")

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        optimizer.lr = cfg.lr_at(epoch)
        order = rng.permutation(len(train_set))
        losses, correct = [], 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            samples = [
                train_set.clip(int(i), n_frames=cfg.n_frames, crop=cfg.crop, mode="train", rng=rng) for i in batch
            ]
            rgb, mvr, labels = collate(samples, stats)
            loss, scores = train_step(model, optimizer, rgb, mvr, labels, cfg.supervise_streams)
            losses.append(loss * len(batch))
            correct += int(np.sum(np.argmax(scores, axis=1) == labels))
        val = (
            evaluate(model, val_set, stats, n_frames=cfg.n_frames, crop=cfg.crop, threads=cfg.threads)
            if len(val_set)
            else None
        )
        record = EpochRecord(
            epoch=epoch,
            lr=optimizer.lr,
            train_loss=float(sum(losses) / len(order)),
            train_top1=correct / len(order),
            val_top1=val.top1 if val else None,
            seconds=time.perf_counter() - started,
        )
        metrics.epochs.append(record)
        if metrics_log is not None:
            append_epoch_record(metrics_log, record)
        logger.info(
            "epoch %d lr=%g loss=%.4f train_top1=%.3f val_top1=%s",
            epoch,
            record.lr,
            record.train_loss,
            record.train_top1,
            "n/a" if val is None else f"{val.top1:.3f}",
        )

    if len(test_set):
        metrics.test = evaluate(model, test_set, stats, n_frames=cfg.n_frames, crop=cfg.crop, threads=cfg.threads)
    if checkpoint is not None:
        save_checkpoint(model, checkpoint, extra=stats.to_header())
    return metrics


def fit_batch(
    model: TwoStreamNetwork,
    rgb: Tensor,
    mvr: Tensor,
    labels: np.ndarray,
    cfg: Optional[TrainConfig] = None,
    steps: int = 10,
) -> List[float]:
    """Repeated updates on one fixed batch; returns the loss before each step."""
    cfg = cfg or TrainConfig()
    optimizer = SGD(model.params, cfg.lr, cfg.momentum, cfg.weight_decay)
    return [train_step(model, optimizer, rgb, mvr, labels, cfg.supervise_streams)[0] for _ in range(steps)]

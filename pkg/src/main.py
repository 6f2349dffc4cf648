"""Main entry point for the compressed-video action recognition toolkit."""

import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import click
import numpy as np
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler

from compressed_action.config.manager import ConfigManager
from compressed_action.errors import (
    CheckFailedError,
    CodecError,
    CompressedActionError,
    ConfigurationError,
    OperatorUsageError,
)
from compressed_action.reporting import format_report

console = Console(stderr=True)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3


def setup_logging(level: str = "INFO", log_file: Optional[str] = None):
    """Setup logging configuration."""
    handlers: List[logging.Handler] = []

    # Console handler with rich formatting
    console_handler = RichHandler(console=console, show_time=True, show_path=False)
    console_handler.setLevel(getattr(logging, level.upper()))
    handlers.append(console_handler)

    # File handler if specified
    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
        handlers.append(file_handler)

    logging.basicConfig(
        level=getattr(logging, level.upper()),
        handlers=handlers,
        format="%(message)s",
        datefmt="[%X]",
        force=True,
    )


def _int_list(text) -> List[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    if isinstance(text, int):
        return [text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _name_list(text) -> List[str]:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _threads(ctx: click.Context, threads: Optional[int]) -> int:
    return threads or ctx.obj["config_manager"].get_thread_count()


def _echo(values, prefix: str = "") -> None:
    click.echo(format_report(values, prefix))


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Structured-text config file")
@click.option("--log-level", default=None, help="Console log level (overrides logging.level)")
@click.option("--log-file", type=click.Path(dir_okay=False), default=None, help="Also log to this file")
@click.pass_context
def cli(ctx, config_path, log_level, log_file):
    """Compressed-video action recognition: codec, two-stream network, training and checks."""
    ctx.ensure_object(dict)

    config_manager = ConfigManager(config_path)
    ctx.obj["config_manager"] = config_manager
    # config file values become option defaults; explicit flags still win
    ctx.default_map = config_manager.default_map()

    # Setup logging based on config
    log_config = config_manager.get_logging_config()
    setup_logging(level=log_level or log_config.get("level") or "INFO", log_file=log_file or log_config.get("file"))


# ---------------------------------------------------------------------------
# codec
# ---------------------------------------------------------------------------


def _load_video(path: str):
    from compressed_action.codec.types import RawVideo

    try:
        frames = np.load(path, allow_pickle=False)
    except (ValueError, OSError) as e:
        raise CodecError(f"cannot read raw video {path}: {e}") from e
    return RawVideo(frames=frames)


@cli.command()
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("output_path", type=click.Path(dir_okay=False))
@click.option("--gop-size", default=12, show_default=True, type=int, help="Frames per GOP")
@click.option("--search-range", default=8, show_default=True, type=int, help="Block-matching range in pixels")
@click.option("--threads", default=None, type=int, help="Encoder worker threads")
@click.pass_context
def encode(ctx, input_path, output_path, gop_size, search_range, threads):
    """Encode a raw video (.npy, T x H x W x 3 uint8) into a GOP container."""
    from compressed_action.codec.container import stream_to_bytes
    from compressed_action.codec.encoder import encode as encode_video

    video = _load_video(input_path)
    stream = encode_video(video, gop_size=gop_size, search_range=search_range, threads=_threads(ctx, threads))
    data = stream_to_bytes(stream)
    Path(output_path).write_bytes(data)
    _echo(
        {
            "frames": stream.num_frames,
            "height": stream.height,
            "width": stream.width,
            "gops": len(stream.gops),
            "gop_size": gop_size,
            "search_range": search_range,
            "bytes": len(data),
        }
    )


@cli.command()
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("output_path", type=click.Path(dir_okay=False))
def decode(input_path, output_path):
    """Decode a GOP container back to a raw video (.npy)."""
    from compressed_action.codec.container import read_stream
    from compressed_action.codec.encoder import decode_sequential

    video = decode_sequential(read_stream(input_path))
    with open(output_path, "wb") as handle:
        np.save(handle, video.frames, allow_pickle=False)
    _echo({"frames": video.num_frames, "height": video.height, "width": video.width})


@cli.command()
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("output_dir", type=click.Path(file_okay=False))
def extract(input_path, output_dir):
    """Write accumulated motion vectors and residuals as tensor records."""
    from compressed_action.codec.container import read_stream
    from compressed_action.codec.sampling import extract_features
    from compressed_action.tensor.serialize import save_tensor

    features = extract_features(read_stream(input_path))
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_tensor(features.acc_mv.astype(np.float64), out / "mv.mten")
    save_tensor(features.acc_residual.astype(np.float64), out / "residual.mten")
    _echo(
        {
            "frames": features.num_frames,
            "mv_shape": list(features.acc_mv.shape),
            "residual_shape": list(features.acc_residual.shape),
            "mv_path": str(out / "mv.mten"),
            "residual_path": str(out / "residual.mten"),
        }
    )


# ---------------------------------------------------------------------------
# dataset, training, evaluation
# ---------------------------------------------------------------------------


@cli.command("dataset-gen")
@click.argument("output_dir", type=click.Path(file_okay=False))
@click.option("--classes", default=5, show_default=True, type=int)
@click.option("--videos-per-class", default=20, show_default=True, type=int)
@click.option("--size", default=64, show_default=True, type=int, help="Frame height and width")
@click.option("--frames", default=24, show_default=True, type=int)
@click.option("--gop-size", default=12, show_default=True, type=int)
@click.option("--noise-std", default=0.0, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--threads", default=None, type=int)
@click.pass_context
def dataset_gen(ctx, output_dir, classes, videos_per_class, size, frames, gop_size, noise_std, seed, threads):
    """Render and encode the synthetic motion dataset."""
    from compressed_action.training.dataset import DatasetSpec, generate_dataset

    spec = DatasetSpec(
        n_classes=classes,
        videos_per_class=videos_per_class,
        height=size,
        width=size,
        frames=frames,
        gop_size=gop_size,
        noise_std=noise_std,
        seed=seed,
    )
    entries = generate_dataset(spec, output_dir, threads=_threads(ctx, threads))
    counts = {split: sum(1 for e in entries if e.split == split) for split in ("train", "val", "test")}
    _echo({"videos": len(entries), "classes": classes, **counts, "manifest": str(Path(output_dir) / "manifest.tsv")})


@cli.command()
@click.argument("data_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False), help="Checkpoint to write")
@click.option("--variant", default="full", show_default=True, help="Model variant (see ablate)")
@click.option("--epochs", default=30, show_default=True, type=int)
@click.option("--lr", default=1e-4, show_default=True, type=float)
@click.option("--momentum", default=0.9, show_default=True, type=float)
@click.option("--weight-decay", default=1e-4, show_default=True, type=float)
@click.option("--batch-size", default=8, show_default=True, type=int)
@click.option("--decay-epochs", default="20", show_default=True, help="Comma-separated LR decay epochs")
@click.option("--frames", default=8, show_default=True, type=int, help="Frames per clip")
@click.option("--crop", default=48, show_default=True, type=int)
@click.option("--supervise-streams/--no-supervise-streams", default=True, show_default=True)
@click.option("--freeze", default="", help="Comma-separated parameter path prefixes left untouched by SGD")
@click.option("--metrics-log", type=click.Path(dir_okay=False), default=None)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--threads", default=None, type=int)
@click.pass_context
def train(
    ctx,
    data_dir,
    checkpoint,
    variant,
    epochs,
    lr,
    momentum,
    weight_decay,
    batch_size,
    decay_epochs,
    frames,
    crop,
    supervise_streams,
    freeze,
    metrics_log,
    seed,
    threads,
):
    """Train a model variant and write its checkpoint."""
    from compressed_action.model.network import build_model
    from compressed_action.training.ablation import variant_config
    from compressed_action.training.trainer import TrainConfig, train as train_model

    cfg = TrainConfig(
        lr=lr,
        momentum=momentum,
        weight_decay=weight_decay,
        batch_size=batch_size,
        epochs=epochs,
        lr_decay_epochs=tuple(e for e in _int_list(decay_epochs) if e < epochs),
        supervise_streams=supervise_streams,
        n_frames=frames,
        crop=(crop, crop),
        seed=seed,
        threads=_threads(ctx, threads),
        freeze=tuple(_name_list(freeze)),
    )
    model = build_model(variant_config(variant, seed=seed))
    metrics = train_model(model, data_dir, cfg, checkpoint=checkpoint, metrics_log=metrics_log)
    last = metrics.epochs[-1]
    report = {
        "variant": variant,
        "params": model.params.count(),
        "epochs": len(metrics.epochs),
        "final_loss": last.train_loss,
        "train_top1": last.train_top1,
        "val_top1": last.val_top1,
        "checkpoint": checkpoint,
    }
    if metrics.test is not None:
        report.update({"test_top1": metrics.test.top1})
    _echo(report)


@cli.command("eval")
@click.argument("data_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--split", default="test", show_default=True, type=click.Choice(["train", "val", "test"]))
@click.option("--clips", default=1, show_default=True, type=int, help="Clips averaged per video")
@click.option("--frames", default=8, show_default=True, type=int)
@click.option("--crop", default=48, show_default=True, type=int)
@click.option("--dump", type=click.Path(dir_okay=False), default=None, help="Write per-video fused logits")
@click.option("--threads", default=None, type=int)
@click.pass_context
def evaluate_cmd(ctx, data_dir, checkpoint, split, clips, frames, crop, dump, threads):
    """Evaluate a checkpoint on one split."""
    from compressed_action.model.checkpoint import load_checkpoint
    from compressed_action.training.dataset import InputStats, VideoDataset
    from compressed_action.training.evaluate import evaluate

    model, header = load_checkpoint(checkpoint)
    dataset = VideoDataset(data_dir, split)
    result = evaluate(
        model,
        dataset,
        InputStats.from_header(header),
        n_clips=clips,
        n_frames=frames,
        crop=(crop, crop),
        threads=_threads(ctx, threads),
        dump=dump,
    )
    _echo(result.report())


@cli.command()
@click.argument("data_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--variants", default="modality", show_default=True, help="Comma-separated variants or tables")
@click.option("--seeds", default="0", show_default=True, help="Comma-separated seeds")
@click.option("--out", "out_csv", default="ablation.csv", show_default=True, type=click.Path(dir_okay=False))
@click.option("--epochs", default=30, show_default=True, type=int)
@click.option("--lr", default=0.01, show_default=True, type=float)
@click.option("--batch-size", default=8, show_default=True, type=int)
@click.option("--decay-epochs", default="20", show_default=True, help="Comma-separated LR decay epochs")
@click.option("--threads", default=None, type=int)
@click.pass_context
def ablate(ctx, data_dir, variants, seeds, out_csv, epochs, lr, batch_size, decay_epochs, threads):
    """Train every variant under one budget and write a CSV table."""
    from compressed_action.training.ablation import ablation_train_config, resolve_variants, run_ablation

    names = resolve_variants(_name_list(variants))
    budget = ablation_train_config().model_copy(
        update={
            "epochs": epochs,
            "lr": lr,
            "batch_size": batch_size,
            "lr_decay_epochs": tuple(e for e in _int_list(decay_epochs) if e < epochs),
            "threads": _threads(ctx, threads),
        }
    )
    rows = run_ablation(names, data_dir, train_cfg=budget, seeds=_int_list(seeds), out_csv=out_csv)
    for row in rows:
        _echo({"top1": row.top1, "params": row.params}, prefix=f"{row.variant}.seed{row.seed}.")
    _echo({"rows": len(rows), "csv": out_csv})


# ---------------------------------------------------------------------------
# verification and diagnostics
# ---------------------------------------------------------------------------


@cli.command("grad-check")
@click.option("--eps", default=1e-5, show_default=True, type=float)
@click.option("--samples", default=4, show_default=True, type=int, help="Coordinates sampled per parameter")
@click.option("--tolerance", default=1e-4, show_default=True, type=float)
@click.option("--blocks", default="dm,msb,smc,cma,head,network", show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
def grad_check(eps, samples, tolerance, blocks, seed):
    """Finite-difference check of every network unit."""
    from compressed_action.cli.checks import FIXTURES, run_grad_checks

    names = _name_list(blocks)
    unknown = [n for n in names if n not in FIXTURES]
    if unknown:
        raise OperatorUsageError(f"unknown blocks {unknown} (valid: {', '.join(FIXTURES)})")
    errors = run_grad_checks(eps=eps, samples_per_param=samples, seed=seed, blocks=names)
    failed = [name for name, value in errors.items() if not value < tolerance]
    _echo({f"{name}.max_rel_error": value for name, value in errors.items()})
    _echo({"tolerance": tolerance, "status": "failed" if failed else "ok"})
    if failed:
        raise CheckFailedError(f"gradient check above {tolerance:g} for {', '.join(failed)}")


@cli.command()
@click.option("--frames", default=24, show_default=True, type=int)
@click.option("--size", default=64, show_default=True, type=int)
@click.option("--repeats", default=1, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--threads", default=None, type=int)
@click.pass_context
def bench(ctx, frames, size, repeats, seed, threads):
    """Frames per second for encode, extract and model forward."""
    from compressed_action.cli.bench import run_bench

    _echo(run_bench(frames=frames, size=size, repeats=repeats, seed=seed, threads=_threads(ctx, threads)))


@cli.command()
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def inspect(path):
    """Print a container header, checkpoint header with parameter counts, or tensor shape."""
    from compressed_action.codec.container import MAGIC as STREAM_MAGIC, read_header
    from compressed_action.model.checkpoint import MAGIC as CHECKPOINT_MAGIC, load_checkpoint
    from compressed_action.tensor.serialize import MAGIC as TENSOR_MAGIC, load_tensor

    with open(path, "rb") as handle:
        magic = handle.read(4)
    if magic == STREAM_MAGIC:
        _echo({"type": "stream", **read_header(path).model_dump()})
    elif magic == CHECKPOINT_MAGIC:
        model, header = load_checkpoint(path)
        counts = {"total": model.params.count()}
        for prefix in ("rgb", "mvr", "smc1", "smc2", "smc3", "smc4", "lateral1", "cma", "head"):
            if model.params.count(prefix):
                counts[prefix] = model.params.count(prefix)
        _echo({"type": "checkpoint", **header})
        _echo(counts, prefix="params.")
    elif magic == TENSOR_MAGIC:
        array = load_tensor(path)
        _echo({"type": "tensor", "shape": list(array.shape), "dtype": str(array.dtype)})
    else:
        raise CodecError(f"unrecognised file magic {magic!r} in {path}")


def _exit_code(error: CompressedActionError) -> int:
    if isinstance(error, CheckFailedError):
        return EXIT_CHECK
    if isinstance(error, (ConfigurationError, OperatorUsageError)):
        return EXIT_USAGE
    return EXIT_DATA


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit code."""
    try:
        args = list(argv) if argv is not None else None
        result = cli.main(args=args, prog_name="compressed-action", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_DATA
    except click.Abort:
        click.echo("error[aborted]: interrupted", err=True)
        return EXIT_USAGE
    except CompressedActionError as e:
        click.echo(e.one_line(), err=True)
        return _exit_code(e)
    except ValidationError as e:
        message = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        click.echo(f"error[configuration]: {message}", err=True)
        return EXIT_USAGE
    except OSError as e:
        click.echo(f"error[io]: {e}", err=True)
        return EXIT_DATA
    return result if isinstance(result, int) else EXIT_OK


def main():
    """Main entry point."""
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Tests for the synthetic dataset, training loop, evaluation and ablation harness."""

import csv

import numpy as np
import pytest

from compressed_action.cli.checks import reduced_model_config
from compressed_action.codec.container import read_stream
from compressed_action.codec.sampling import extract_features
from compressed_action.errors import ConfigurationError, DatasetError, TrainingDivergedError
from compressed_action.model.checkpoint import load_checkpoint
from compressed_action.model.network import build_model
from compressed_action.tensor.core import Tensor
from compressed_action.training import trainer
from compressed_action.training.ablation import (
    CSV_HEADER,
    TABLES,
    VARIANTS,
    ablation_train_config,
    resolve_variants,
    run_ablation,
    variant_config,
)
from compressed_action.training.dataset import (
    PATTERNS,
    DatasetSpec,
    InputStats,
    VideoDataset,
    _trajectory,
    collate,
    compute_input_stats,
    generate_dataset,
    read_manifest,
    split_counts,
)
from compressed_action.training.evaluate import evaluate, read_logit_dump, top1
from compressed_action.training.trainer import SGD, TrainConfig, fit_batch, read_metrics_log, train, train_step

TINY = DatasetSpec(videos_per_class=5, height=32, width=32, frames=8, gop_size=4, search_range=4, seed=11)
CLIP = dict(n_frames=4, crop=(16, 16))


@pytest.fixture(scope="module")
def tiny_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    generate_dataset(TINY, root, threads=2)
    return root


def small_batch(seed=0, batch=4):
    rng = np.random.default_rng(seed)
    rgb = Tensor(rng.normal(size=(batch, 3, 4, 16, 16)))
    mvr = Tensor(rng.normal(size=(batch, 5, 4, 16, 16)))
    labels = rng.integers(0, 5, size=batch)
    return rgb, mvr, labels


class TestDataset:

    def test_generation_is_byte_identical(self, tmp_path, tiny_root):
        """Test that the same seed reproduces every file exactly."""
        generate_dataset(TINY, tmp_path, threads=1)
        for name in ["manifest.tsv", "dataset.txt"] + [e.path for e in read_manifest(tiny_root)]:
            assert (tmp_path / name).read_bytes() == (tiny_root / name).read_bytes()

    def test_different_seed_differs(self, tmp_path, tiny_root):
        """Test that the seed changes the rendered videos."""
        generate_dataset(TINY.model_copy(update={"seed": 12, "n_classes": 2, "videos_per_class": 1}), tmp_path)
        path = read_manifest(tmp_path)[0].path
        assert (tmp_path / path).read_bytes() != (tiny_root / path).read_bytes()

    def test_manifest_and_splits(self, tiny_root):
        """Test class balance and per-class split counts."""
        entries = read_manifest(tiny_root)
        assert len(entries) == 25
        assert split_counts(5, TINY.split_fractions) == (4, 0, 1)
        for label in range(5):
            splits = sorted(e.split for e in entries if e.label == label)
            assert splits == ["test", "train", "train", "train", "train"]
        assert entries[0].path.startswith(f"videos/{PATTERNS[0][0]}_")

    def test_streams_decode_to_spec(self, tiny_root):
        """Test container geometry of a generated video."""
        stream = read_stream(tiny_root / read_manifest(tiny_root)[0].path)
        assert (stream.num_frames, stream.height, stream.width) == (8, 32, 32)
        assert [g.num_frames for g in stream.gops] == [4, 4]

    def test_mean_motion_follows_pattern(self, tmp_path):
        """Test the class-conditional mean accumulated motion of the translation classes."""
        spec = DatasetSpec(n_classes=3, videos_per_class=2, frames=12, seed=5)
        generate_dataset(spec, tmp_path, threads=2)
        moving = {label: [] for label in range(3)}
        for entry in read_manifest(tmp_path):
            mv = extract_features(read_stream(tmp_path / entry.path)).acc_mv.reshape(-1, 2).astype(np.float64)
            moving[entry.label].append(mv[np.abs(mv).sum(axis=1) > 0])
        down, up, sideways = (np.concatenate(moving[label]) for label in range(3))
        assert down[:, 0].mean() > 0 > up[:, 0].mean()
        for vertical in (down, up):
            assert np.abs(vertical[:, 0]).mean() > np.abs(vertical[:, 1]).mean()
        assert np.abs(sideways[:, 1]).mean() > np.abs(sideways[:, 0]).mean()

    def test_patterns_are_mirror_symmetric(self):
        """Test that sideways travel takes both directions and vertical travel never drifts sideways."""
        spec = DatasetSpec()
        directions = set()
        for seed in range(20):
            path = list(_trajectory(2, spec, np.random.default_rng(seed)))
            directions.add(int(np.sign(path[-1][1] - path[0][1])))
            for label in (0, 1):
                columns = {cx for _, cx, _ in _trajectory(label, spec, np.random.default_rng(seed))}
                assert len(columns) == 1
        assert directions == {-1, 1}

    def test_square_classes_share_one_appearance(self):
        """Test that a single frame of any square class shows the same object size."""
        spec = DatasetSpec()
        sizes = {size for label in (0, 1, 2) for _, _, size in _trajectory(label, spec, np.random.default_rng(label))}
        assert sizes == {spec.object_size}
        assert [PATTERNS[label][1] for label in (0, 1, 2)] == ["square"] * 3

    def test_extents_must_fit_macroblocks(self, tmp_path):
        """Test the padding hint for unaligned frame sizes."""
        with pytest.raises(DatasetError, match="pad height by 8"):
            generate_dataset(TINY.model_copy(update={"height": 40}), tmp_path)

    def test_bad_split_fractions(self):
        """Test split fraction validation."""
        with pytest.raises(ValueError):
            DatasetSpec(split_fractions=(0.5, 0.5, 0.5))

    def test_missing_manifest(self, tmp_path):
        """Test reading a directory without a dataset."""
        with pytest.raises(DatasetError):
            VideoDataset(tmp_path, "train")

    def test_input_stats_and_collate(self, tiny_root):
        """Test RGB standardisation statistics and batch layout."""
        dataset = VideoDataset(tiny_root, "train")
        stats = compute_input_stats(dataset)
        assert all(0.0 < m < 1.0 for m in stats.rgb_mean)
        assert InputStats.from_header(stats.to_header()) == stats
        rgb, mvr, labels = collate([dataset.clip(i, **CLIP) for i in range(3)], stats)
        assert rgb.shape == (3, 3, 4, 16, 16)
        assert mvr.shape == (3, 5, 4, 16, 16)
        assert labels.tolist() == dataset.labels[:3].tolist()


class TestOptimizer:

    def test_schedule(self):
        """Test step decay at the configured epochs."""
        cfg = TrainConfig()
        assert cfg.lr_at(0) == pytest.approx(1e-4)
        assert cfg.lr_at(19) == pytest.approx(1e-4)
        assert cfg.lr_at(20) == pytest.approx(1e-5)

    def test_decay_epochs_must_increase(self):
        """Test schedule validation."""
        with pytest.raises(ValueError):
            TrainConfig(lr_decay_epochs=(5, 5))

    def test_zero_learning_rate_keeps_parameters(self):
        """Test that a zero-lr step changes nothing."""
        model = build_model(reduced_model_config())
        before = model.params.state()
        rgb, mvr, labels = small_batch()
        train_step(model, SGD(model.params, lr=0.0), rgb, mvr, labels)
        for path, value in model.params.state().items():
            np.testing.assert_array_equal(value, before[path])

    def test_momentum_update_rule(self):
        """Test v <- mu v + g + wd theta and theta <- theta - lr v on one parameter."""
        model = build_model(reduced_model_config())
        tensor = model.params["head.rgb.bias"]
        tensor.data[...] = 1.0
        optimizer = SGD(model.params, lr=0.1, momentum=0.5, weight_decay=0.01)
        for _ in range(2):
            optimizer.zero_grad()
            tensor.grad[...] = 2.0
            optimizer.step()
        v1 = 2.0 + 0.01 * 1.0
        theta1 = 1.0 - 0.1 * v1
        v2 = 0.5 * v1 + 2.0 + 0.01 * theta1
        np.testing.assert_allclose(tensor.data, theta1 - 0.1 * v2)

    def test_frozen_parameters_keep_values(self):
        """Test that a step moves trainable parameters only."""
        model = build_model(reduced_model_config())
        model.params.freeze("head")
        before = model.params.state()
        train_step(model, SGD(model.params, lr=0.1), *small_batch())
        after = model.params.state()
        for path, value in before.items():
            if path.startswith("head."):
                np.testing.assert_array_equal(after[path], value)
        assert any(not np.array_equal(after[p], before[p]) for p in before if not p.startswith("head."))

    def test_loss_decreases_on_fixed_batch(self):
        """Test monotone descent over ten default-lr steps."""
        model = build_model(reduced_model_config(seed=1))
        losses = fit_batch(model, *small_batch(1), steps=10)
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_overfits_tiny_batch(self):
        """Test that repeated updates drive the loss well down."""
        model = build_model(reduced_model_config(seed=2))
        losses = fit_batch(model, *small_batch(2), cfg=TrainConfig(lr=0.01), steps=150)
        assert min(losses[-10:]) < 0.5 * losses[0]

    def test_non_finite_loss_is_divergence(self, monkeypatch):
        """Test the divergence error on an infinite loss."""
        model = build_model(reduced_model_config())
        monkeypatch.setattr(
            trainer, "compute_loss", lambda *args: Tensor(np.array(np.inf), requires_grad=True)
        )
        with pytest.raises(TrainingDivergedError, match="learning rate"):
            train_step(model, SGD(model.params, lr=1.0), *small_batch())


class TestEvaluate:

    def test_top1_ties_take_lowest_index(self):
        """Test argmax tie-breaking."""
        assert top1(np.zeros((4, 5)), np.array([0, 0, 1, 2])) == 0.5

    def test_constant_model_scores_chance(self, tiny_root):
        """Test that zero logits score one in five on a balanced split."""
        model = build_model(reduced_model_config(zero_init_heads=True))
        result = evaluate(model, VideoDataset(tiny_root, "test"), InputStats(), **CLIP)
        assert result.count == 5
        assert result.top1 == pytest.approx(0.2)

    def test_multi_clip_equals_single_clip_for_full_length(self, tiny_root):
        """Test that clips spanning the whole video agree with one clip."""
        model = build_model(reduced_model_config(seed=3))
        dataset = VideoDataset(tiny_root, "test")
        one = evaluate(model, dataset, InputStats(), n_clips=1, n_frames=8, crop=(16, 16))
        three = evaluate(model, dataset, InputStats(), n_clips=3, n_frames=8, crop=(16, 16), threads=2)
        assert one.top1 == three.top1
        assert one.top1_rgb == three.top1_rgb

    def test_logit_dump_reproduces_accuracy(self, tiny_root, tmp_path):
        """Test that top-1 recomputed from the dump matches."""
        model = build_model(reduced_model_config(seed=4))
        dump = tmp_path / "logits.tsv"
        result = evaluate(model, VideoDataset(tiny_root, "test"), InputStats(), dump=dump, **CLIP)
        labels, logits = read_logit_dump(dump)
        assert len(labels) == 5
        assert top1(logits, labels) == result.top1

    def test_empty_split(self, tiny_root):
        """Test evaluation of a split with no videos."""
        with pytest.raises(DatasetError):
            evaluate(build_model(reduced_model_config()), VideoDataset(tiny_root, "val"), InputStats())


class TestTrain:

    def test_train_writes_metrics_and_checkpoint(self, tiny_root, tmp_path):
        """Test a two-epoch run end to end."""
        cfg = TrainConfig(lr=0.01, epochs=2, lr_decay_epochs=(1,), batch_size=8, **CLIP)
        checkpoint, log = tmp_path / "model.ckpt", tmp_path / "metrics.txt"
        metrics = train(build_model(reduced_model_config()), tiny_root, cfg, checkpoint=checkpoint, metrics_log=log)
        assert [r.epoch for r in metrics.epochs] == [0, 1]
        assert metrics.epochs[1].lr == pytest.approx(0.001)
        assert metrics.epochs[0].val_top1 is None
        assert metrics.test.count == 5
        assert [r.epoch for r in read_metrics_log(log)] == [0, 1]
        _, extra = load_checkpoint(checkpoint)
        assert len(extra["input.rgb_mean"]) == 3

    def test_same_seed_trains_bit_identically(self, tiny_root):
        """Test that two runs with one seed give identical parameters and metrics."""
        cfg = TrainConfig(lr=0.01, epochs=2, lr_decay_epochs=(1,), batch_size=4, seed=3, threads=2, **CLIP)
        runs = []
        for _ in range(2):
            model = build_model(reduced_model_config(seed=3))
            metrics = train(model, tiny_root, cfg)
            runs.append((model.params.state(), metrics))
        (first, first_metrics), (second, second_metrics) = runs
        for path, value in first.items():
            np.testing.assert_array_equal(value, second[path])
        epochs = [[r.model_dump(exclude={"seconds"}) for r in m.epochs] for m in (first_metrics, second_metrics)]
        assert epochs[0] == epochs[1]
        assert first_metrics.test == second_metrics.test

    def test_unknown_freeze_prefix(self, tiny_root):
        """Test that freezing a prefix with no parameters is a configuration error."""
        cfg = TrainConfig(epochs=1, freeze=("flow",), **CLIP)
        with pytest.raises(ConfigurationError, match="flow"):
            train(build_model(reduced_model_config()), tiny_root, cfg)

    def test_class_count_mismatch(self, tiny_root):
        """Test a model head narrower than the dataset."""
        with pytest.raises(ConfigurationError):
            train(build_model(reduced_model_config(num_classes=3)), tiny_root, TrainConfig(epochs=1, **CLIP))


class TestAblation:

    def test_default_budget(self):
        """Test the shared 30-epoch schedule with its tenfold drop at epoch 20."""
        cfg = ablation_train_config()
        assert (cfg.epochs, cfg.batch_size, cfg.lr_decay_epochs) == (30, 8, (20,))
        assert cfg.lr_at(19) == pytest.approx(0.01)
        assert cfg.lr_at(20) == pytest.approx(0.001)

    def test_tables_resolve(self):
        """Test table expansion and deduplication."""
        assert resolve_variants(["cme"]) == TABLES["cme"]
        assert resolve_variants(["modality", "full"]).count("full") == 1

    def test_unknown_variant_lists_valid_names(self):
        """Test the error for a misspelt variant."""
        with pytest.raises(ConfigurationError, match="B1\\+MSB"):
            resolve_variants(["B3"])

    def test_every_variant_builds(self):
        """Test that each variant is a valid plan."""
        for name in VARIANTS:
            build_model(variant_config(name, reduced_model_config()))

    def test_multi_scale_blocks_are_smaller(self):
        """Test B1+MSB parameter economy over B1."""
        b1 = build_model(variant_config("B1")).parameter_count()
        msb = build_model(variant_config("B1+MSB")).parameter_count()
        assert msb < b1

    def test_cme_matches_mvr_only(self):
        """Test that the two names describe the same model."""
        assert variant_config("CME") == variant_config("mvr-only")

    def test_tiny_run_writes_csv(self, tiny_root, tmp_path):
        """Test a one-epoch ablation of one variant."""
        cfg = TrainConfig(lr=0.01, epochs=1, lr_decay_epochs=(1,), **CLIP)
        out = tmp_path / "ablation.csv"
        rows = run_ablation(["B1"], tiny_root, cfg, base=reduced_model_config(), out_csv=out)
        assert [r.variant for r in rows] == ["B1"]
        with open(out) as handle:
            table = list(csv.reader(handle))
        assert tuple(table[0]) == CSV_HEADER
        assert table[1][0] == "B1"
        assert int(table[1][2]) == rows[0].params

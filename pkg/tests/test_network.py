"""Tests for the assembled two-stream network and checkpoints."""

import numpy as np
import pytest

from compressed_action.cli.checks import network_fixture, reduced_model_config
from compressed_action.errors import ConfigurationError, PreconditionError, StreamFormatError
from compressed_action.model.checkpoint import (
    checkpoint_from_bytes,
    checkpoint_to_bytes,
    load_checkpoint,
    read_checkpoint_header,
    save_checkpoint,
)
from compressed_action.model.config import ModelConfig, StagePlan
from compressed_action.model.network import build_model
from compressed_action.tensor.core import Tensor
from compressed_action.tensor.gradcheck import grad_check


def clip_pair(seed=0, batch=2, frames=4, size=16):
    rng = np.random.default_rng(seed)
    return (
        Tensor(rng.normal(size=(batch, 3, frames, size, size))),
        Tensor(rng.normal(size=(batch, 5, frames, size, size))),
    )


class TestBuildModel:

    def test_default_plan_size(self):
        """Test that the default reduced plan holds on the order of 1e5 parameters."""
        model = build_model()
        assert 30_000 < model.parameter_count() < 300_000
        assert model.parameter_count("smc1") > 0
        assert model.parameter_count("cma") > 0

    def test_parameter_paths(self):
        """Test the stable path layout of both streams and the heads."""
        model = build_model()
        paths = set(model.params)
        assert "rgb.stem.weight" in paths
        assert "rgb.stage1.block0.conv_a.weight" in paths
        assert "mvr.stage4.block0.branch4.temporal.weight" in paths
        assert "smc4.att_c.weight" in paths
        assert {"head.rgb.weight", "head.mvr.weight", "head.fused.weight"} <= paths

    def test_same_seed_same_parameters(self):
        """Test seeded initialisation."""
        a, b = build_model(seed=3), build_model(seed=3)
        for path, tensor in a.params.items():
            np.testing.assert_array_equal(tensor.data, b.params[path].data)

    def test_residual_branches_start_silent(self):
        """Test that an equal-width block starts as its identity shortcut."""
        model = build_model(seed=5)
        assert not model.params["rgb.stage1.block0.conv_c.weight"].data.any()
        assert not model.params["mvr.stage2.block0.fuse.weight"].data.any()
        f = model.rgb.stem_forward(clip_pair(5)[0])
        np.testing.assert_array_equal(model.rgb.stage_forward(0, f).data, f.data)
        raw = build_model({"seed": 5, "zero_init_residual": False})
        assert raw.params["rgb.stage1.block0.conv_c.weight"].data.any()

    def test_accepts_plain_dict(self):
        """Test building from a mapping."""
        model = build_model({"num_classes": 3, "use_cma": False})
        assert model.head_fused is None
        assert model.params["head.rgb.bias"].shape == (3,)

    @pytest.mark.parametrize(
        "changes,match",
        [
            ({"streams": "rgb"}, "single-stream"),
            ({"lateral_kernel": 4}, "odd"),
            ({"smc_ratio": 32}, "SMC ratio"),
            ({"stages": StagePlan(widths=(16, 32), blocks=(1,))}, "blocks"),
            ({"stages": StagePlan(widths=(16, 24, 64, 128))}, "stage 2"),
        ],
    )
    def test_invalid_plans(self, changes, match):
        """Test that inconsistent plans fail with a configuration error."""
        with pytest.raises(ConfigurationError, match=match):
            build_model(ModelConfig(**changes))


class TestForward:

    def test_output_shapes(self):
        """Test logits of every head."""
        model = build_model(reduced_model_config())
        out = model(*clip_pair())
        for z in (out.z_rgb, out.z_mvr, out.z_fused, out.score):
            assert z.shape == (2, 5)

    def test_score_is_mean_of_heads(self):
        """Test score fusion inside the network."""
        out = build_model(reduced_model_config()).forward(*clip_pair(1))
        expected = (out.z_rgb.data + out.z_mvr.data + out.z_fused.data) / 3
        np.testing.assert_allclose(out.score.data, expected, atol=1e-12)

    def test_zero_initialised_heads_give_zero_score(self):
        """Test that zero head weights and biases produce zero logits."""
        out = build_model(reduced_model_config(zero_init_heads=True)).forward(*clip_pair(2))
        assert not out.score.data.any()

    def test_forward_is_deterministic(self):
        """Test bit-identical repeated forward passes."""
        model = build_model(reduced_model_config())
        rgb, mvr = clip_pair(3)
        np.testing.assert_array_equal(model(rgb, mvr).score.data, model(rgb, mvr).score.data)

    @pytest.mark.parametrize("streams", ["rgb", "mvr"])
    def test_single_stream(self, streams):
        """Test single-stream models use only their own head."""
        model = build_model(reduced_model_config(streams=streams, fusion="none", use_cma=False))
        rgb, mvr = clip_pair(4)
        out = model(rgb if streams == "rgb" else None, mvr if streams == "mvr" else None)
        head = out.z_rgb if streams == "rgb" else out.z_mvr
        assert out.z_fused is None
        np.testing.assert_array_equal(out.score.data, head.data)

    def test_missing_clip(self):
        """Test a two-stream model without its MVR input."""
        model = build_model(reduced_model_config())
        with pytest.raises(PreconditionError):
            model(clip_pair()[0], None)

    @pytest.mark.parametrize("fusion", ["add", "lateral", "none"])
    def test_fusion_variants(self, fusion):
        """Test alternative cross-modal fusions."""
        model = build_model(reduced_model_config(fusion=fusion, mvr_block="bottleneck"))
        assert model.forward(*clip_pair(5)).score.shape == (2, 5)
        assert (model.parameter_count("lateral1") > 0) == (fusion == "lateral")

    @pytest.mark.parametrize("seed", [0, 1])
    def test_full_network_gradients(self, seed):
        """Test end-to-end gradients of the reduced network."""
        graph, store = network_fixture(seed=seed)
        assert grad_check(graph, store, samples_per_param=2) < 1e-4


class TestCheckpoint:

    def test_round_trip_preserves_outputs(self, tmp_path):
        """Test that a reloaded model reproduces its logits exactly."""
        model = build_model(reduced_model_config(seed=7, fusion="lateral", cma_key_dim=4))
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path, extra={"input.rgb_mean": 0.25})
        loaded, extra = load_checkpoint(path)
        assert loaded.cfg == model.cfg
        assert extra == {"input.rgb_mean": 0.25}
        rgb, mvr = clip_pair(6)
        np.testing.assert_array_equal(loaded(rgb, mvr).score.data, model(rgb, mvr).score.data)

    def test_header_is_readable_text(self, tmp_path):
        """Test reading the header without building the model."""
        path = tmp_path / "model.ckpt"
        save_checkpoint(build_model(reduced_model_config(fusion="none")), path)
        header = read_checkpoint_header(path)
        assert header["model.fusion"] == "none"
        assert header["model.stages.widths"] == [16, 16, 16, 16]

    def test_truncated_checkpoint(self):
        """Test that a cut record is reported as a format error."""
        blob = checkpoint_to_bytes(build_model(reduced_model_config()))
        with pytest.raises(StreamFormatError):
            checkpoint_from_bytes(blob[:-3])
        with pytest.raises(StreamFormatError):
            checkpoint_from_bytes(blob + b"\x00")
        with pytest.raises(StreamFormatError):
            checkpoint_from_bytes(b"NOPE" + blob[4:])

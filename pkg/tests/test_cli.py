"""Tests for the command-line interface and its exit codes."""

import numpy as np
import pytest

from compressed_action.config.manager import parse_structured_text
from main import EXIT_CHECK, EXIT_DATA, EXIT_OK, EXIT_USAGE, run


@pytest.fixture
def raw_video(tmp_path):
    frames = np.random.default_rng(0).integers(0, 256, size=(5, 32, 32, 3), dtype=np.uint8)
    path = tmp_path / "video.npy"
    np.save(path, frames)
    return path, frames


def report(capsys):
    return parse_structured_text(capsys.readouterr().out)


class TestCommands:

    def test_unknown_subcommand(self, capsys):
        """Test that an unknown command is a usage error."""
        assert run(["frobnicate"]) == EXIT_USAGE

    def test_encode_decode_round_trip(self, raw_video, tmp_path, capsys):
        """Test lossless encode and decode through the CLI."""
        path, frames = raw_video
        stream, decoded = tmp_path / "video.gops", tmp_path / "decoded.npy"
        assert run(["encode", str(path), str(stream), "--gop-size", "2", "--search-range", "4"]) == EXIT_OK
        encoded = report(capsys)
        assert (encoded["frames"], encoded["gops"]) == (5, 3)
        assert run(["decode", str(stream), str(decoded)]) == EXIT_OK
        np.testing.assert_array_equal(np.load(decoded), frames)

    def test_extract_and_inspect(self, raw_video, tmp_path, capsys):
        """Test accumulated field export and header inspection."""
        path, _ = raw_video
        stream, out = tmp_path / "video.gops", tmp_path / "fields"
        run(["encode", str(path), str(stream), "--gop-size", "3", "--search-range", "2"])
        capsys.readouterr()
        assert run(["extract", str(stream), str(out)]) == EXIT_OK
        assert report(capsys)["mv_shape"] == [5, 32, 32, 2]
        assert run(["inspect", str(stream)]) == EXIT_OK
        header = report(capsys)
        assert (header["type"], header["gop_size"], header["gop_count"]) == ("stream", 3, 2)
        assert run(["inspect", str(out / "mv.mten")]) == EXIT_OK
        assert report(capsys)["shape"] == [1, 5, 32, 32, 2]

    def test_unaligned_video_is_data_error(self, tmp_path, capsys):
        """Test the codec error path and its one-line message."""
        path = tmp_path / "odd.npy"
        np.save(path, np.zeros((2, 20, 32, 3), dtype=np.uint8))
        assert run(["encode", str(path), str(tmp_path / "odd.gops")]) == EXIT_DATA
        assert "error[codec]:" in capsys.readouterr().err

    def test_inspect_unknown_file(self, tmp_path, capsys):
        """Test a file with no recognised magic."""
        path = tmp_path / "junk.bin"
        path.write_bytes(b"JUNKJUNK")
        assert run(["inspect", str(path)]) == EXIT_DATA

    def test_corrupt_stream(self, raw_video, tmp_path, capsys):
        """Test a truncated container."""
        path, _ = raw_video
        stream = tmp_path / "video.gops"
        run(["encode", str(path), str(stream)])
        stream.write_bytes(stream.read_bytes()[:-5])
        assert run(["decode", str(stream), str(tmp_path / "out.npy")]) == EXIT_DATA
        assert "error[stream-format]" in capsys.readouterr().err

    def test_missing_input_is_usage_error(self, tmp_path):
        """Test a nonexistent input path."""
        assert run(["decode", str(tmp_path / "absent.gops"), str(tmp_path / "out.npy")]) == EXIT_USAGE


class TestChecks:

    def test_grad_check_subset_passes(self, capsys):
        """Test a passing gradient check on two units."""
        assert run(["grad-check", "--blocks", "dm,head"]) == EXIT_OK
        values = report(capsys)
        assert values["status"] == "ok"
        assert values["dm.max_rel_error"] < 1e-4

    def test_default_suite_passes(self, capsys):
        """Test every unit and the whole network at the default settings."""
        assert run(["grad-check"]) == EXIT_OK
        values = report(capsys)
        assert values["status"] == "ok"
        for name in ("dm", "msb", "smc", "cma", "head", "network"):
            assert values[f"{name}.max_rel_error"] < 1e-4

    def test_zero_tolerance_fails(self, capsys):
        """Test that an impossible tolerance exits with the check code."""
        assert run(["grad-check", "--blocks", "head", "--tolerance", "0"]) == EXIT_CHECK
        captured = capsys.readouterr()
        assert "status=failed" in captured.out
        assert "error[check-failed]" in captured.err

    def test_unknown_block(self):
        """Test an unknown unit name."""
        assert run(["grad-check", "--blocks", "lstm"]) == EXIT_USAGE

    def test_bench_reports_rates(self, capsys):
        """Test that bench prints positive rates and its fixed fields."""
        assert run(["bench", "--frames", "12", "--size", "64"]) == EXIT_OK
        values = report(capsys)
        assert (values["frames"], values["height"], values["clip_frames"]) == (12, 64, 8)
        assert values["params"] > 0
        assert min(values["encode_fps"], values["extract_fps"], values["forward_fps"]) > 0


class TestConfiguration:

    def test_config_supplies_option_defaults(self, raw_video, tmp_path, capsys):
        """Test that config sections become defaults and flags still win."""
        path, _ = raw_video
        config = tmp_path / "config.txt"
        config.write_text("logging.level=WARNING\nencode.gop_size=2\nencode.search_range=3\n")
        stream = tmp_path / "video.gops"
        assert run(["--config", str(config), "encode", str(path), str(stream)]) == EXIT_OK
        values = report(capsys)
        assert (values["gop_size"], values["search_range"]) == (2, 3)
        assert run(["--config", str(config), "encode", str(path), str(stream), "--gop-size", "5"]) == EXIT_OK
        assert report(capsys)["gop_size"] == 5

    def test_missing_config_file(self, tmp_path, capsys):
        """Test an explicit config path that does not exist."""
        assert run(["--config", str(tmp_path / "absent.txt"), "inspect", str(tmp_path)]) == EXIT_USAGE

    def test_invalid_model_option(self, tmp_path, capsys):
        """Test that a bad dataset option reports a configuration error."""
        assert run(["dataset-gen", str(tmp_path / "data"), "--classes", "9"]) == EXIT_USAGE
        assert "error[configuration]" in capsys.readouterr().err

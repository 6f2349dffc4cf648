"""Tests for the synthetic GOP codec, accumulation and clip sampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compressed_action.codec.accumulate import accumulate, reconstruct_from_accumulated
from compressed_action.codec.container import read_header, read_stream, stream_from_bytes, stream_to_bytes, write_stream
from compressed_action.codec.encoder import decode_gop, decode_sequential, encode
from compressed_action.codec.motion import block_match, candidate_displacements
from compressed_action.codec.sampling import clip_indices, extract_features, sample_clip
from compressed_action.codec.types import Gop, GopStream, PFrame, RawVideo
from compressed_action.errors import CodecError, PreconditionError, StreamFormatError


def random_video(rng, frames=5, height=32, width=32):
    return RawVideo(frames=rng.integers(0, 256, size=(frames, height, width, 3), dtype=np.uint8))


def random_gop(rng, frames, height, width, search_range):
    """A GOP built directly from random motion fields and residuals."""
    pframes = []
    for _ in range(frames - 1):
        mv = rng.integers(-search_range, search_range + 1, size=(height // 16, width // 16, 2)).astype(np.int16)
        residual = rng.integers(-40, 41, size=(height, width, 3)).astype(np.int16)
        pframes.append(PFrame(mv=mv, residual=residual))
    iframe = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    return Gop(iframe=iframe, pframes=pframes)


def brute_force_match(reference, current, search_range, block=16):
    """Per-block SAD over candidates ordered by (|dy|+|dx|, dy, dx); first minimum wins."""
    height, width = current.shape[:2]
    ref, cur = reference.astype(np.int64), current.astype(np.int64)
    span = range(-search_range, search_range + 1)
    candidates = sorted(((dy, dx) for dy in span for dx in span), key=lambda d: (abs(d[0]) + abs(d[1]), d))
    field = np.zeros((height // block, width // block, 2), dtype=np.int16)
    prediction = np.zeros_like(cur)
    for by in range(height // block):
        for bx in range(width // block):
            best = None
            for dy, dx in candidates:
                sad = 0
                for y in range(by * block, (by + 1) * block):
                    for x in range(bx * block, (bx + 1) * block):
                        source = ref[min(max(y - dy, 0), height - 1), min(max(x - dx, 0), width - 1)]
                        sad += int(np.abs(cur[y, x] - source).sum())
                if best is None or sad < best:
                    best = sad
                    field[by, bx] = (dy, dx)
            dy, dx = field[by, bx]
            for y in range(by * block, (by + 1) * block):
                for x in range(bx * block, (bx + 1) * block):
                    prediction[y, x] = ref[min(max(y - dy, 0), height - 1), min(max(x - dx, 0), width - 1)]
    return field, prediction


class TestMotion:

    def test_candidate_order(self):
        """Test that zero motion is tried first and ties are lexicographic."""
        order = candidate_displacements(1)
        assert order[0] == (0, 0)
        assert order[1:5] == ((-1, 0), (0, -1), (0, 1), (1, 0))
        assert len(order) == 9

    def test_recovers_translation(self):
        """Test that an interior block finds the true shift of a noise texture."""
        rng = np.random.default_rng(0)
        reference = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        current = np.roll(reference, (2, 3), axis=(0, 1))
        mv, residual = block_match(reference, current, search_range=4)
        assert tuple(mv[1, 1]) == (2, 3)
        assert tuple(mv[2, 2]) == (2, 3)
        assert not residual[16:48, 16:48].any()

    def test_static_frame_has_zero_motion(self):
        """Test that identical frames give zero vectors and residuals."""
        frame = np.full((32, 32, 3), 90, dtype=np.uint8)
        mv, residual = block_match(frame, frame, search_range=8)
        assert not mv.any()
        assert not residual.any()

    def test_rejects_mismatched_frames(self):
        """Test size disagreement between reference and current."""
        with pytest.raises(CodecError, match="frame sizes differ"):
            block_match(np.zeros((16, 16, 3), np.uint8), np.zeros((32, 16, 3), np.uint8))
        with pytest.raises(CodecError, match="not a multiple"):
            block_match(np.zeros((24, 16, 3), np.uint8), np.zeros((24, 16, 3), np.uint8))
        with pytest.raises(CodecError, match="search range"):
            block_match(np.zeros((16, 16, 3), np.uint8), np.zeros((16, 16, 3), np.uint8), search_range=-1)

    @pytest.mark.parametrize("seed, levels", [(0, 256), (1, 3), (2, 2)])
    def test_matches_brute_force_search(self, seed, levels):
        """Test the vectorised search against per-pixel SAD with clamped coordinates."""
        rng = np.random.default_rng(seed)
        reference = rng.integers(0, levels, size=(32, 48, 3), dtype=np.uint8)
        current = np.roll(reference, (1, -2), axis=(0, 1))
        current[rng.random(current.shape[:2]) < 0.3] = rng.integers(0, levels, size=3, dtype=np.uint8)
        mv, residual = block_match(reference, current, search_range=2)
        expected_mv, prediction = brute_force_match(reference, current, search_range=2)
        np.testing.assert_array_equal(mv, expected_mv)
        np.testing.assert_array_equal(residual, current.astype(np.int64) - prediction)


class TestEncoder:

    @pytest.mark.parametrize("gop_size", [1, 2, 3, 12])
    def test_lossless_round_trip(self, gop_size):
        """Test that sequential decoding reproduces the source exactly."""
        rng = np.random.default_rng(gop_size)
        for _ in range(3):
            video = random_video(rng, frames=7)
            stream = encode(video, gop_size=gop_size, search_range=3, threads=1)
            assert stream.num_frames == 7
            assert decode_sequential(stream).equals(video)

    def test_gop_layout(self):
        """Test GOP splitting with a short final GOP."""
        stream = encode(random_video(np.random.default_rng(1), frames=5), gop_size=2, search_range=2)
        assert [g.num_frames for g in stream.gops] == [2, 2, 1]

    def test_threaded_encode_matches_serial(self):
        """Test that worker count does not change the stream."""
        video = random_video(np.random.default_rng(2), frames=6)
        serial = encode(video, gop_size=2, search_range=2, threads=1)
        threaded = encode(video, gop_size=2, search_range=2, threads=4)
        assert serial.equals(threaded)

    def test_extent_error_reports_padding(self):
        """Test that a non-multiple frame size names the padding needed."""
        video = RawVideo(frames=np.zeros((2, 20, 32, 3), dtype=np.uint8))
        with pytest.raises(CodecError, match="pad height by 12"):
            encode(video)

    def test_rejects_bad_parameters(self):
        """Test gop size and search range bounds."""
        video = random_video(np.random.default_rng(3), frames=2, height=16, width=16)
        with pytest.raises(CodecError):
            encode(video, gop_size=0)
        with pytest.raises(CodecError):
            encode(video, search_range=-1)

    def test_raw_video_validation(self):
        """Test frame array checks."""
        with pytest.raises(CodecError):
            RawVideo(frames=np.zeros((2, 16, 16, 3), dtype=np.float32))
        with pytest.raises(CodecError):
            RawVideo(frames=np.zeros((2, 16, 16), dtype=np.uint8))


class TestAccumulation:

    def test_matches_sequential_decoding(self):
        """Test accumulated reconstruction against decoding on random GOPs."""
        rng = np.random.default_rng(4)
        for _ in range(100):
            frames = int(rng.integers(1, 7))
            height, width = 16 * int(rng.integers(1, 4)), 16 * int(rng.integers(1, 4))
            search_range = int(rng.integers(0, 9))
            gop = random_gop(rng, frames, height, width, search_range)
            fields = accumulate(gop)
            decoded = decode_gop(gop)
            for t in range(frames):
                expected = np.clip(decoded[t], 0, 255).astype(np.uint8)
                np.testing.assert_array_equal(reconstruct_from_accumulated(gop, fields, t), expected)

    def test_iframe_fields_are_zero(self):
        """Test that index 0 carries no displacement or residual."""
        gop = random_gop(np.random.default_rng(5), 3, 32, 32, 4)
        fields = accumulate(gop)
        assert fields.num_frames == 3
        assert not fields.mv[0].any()
        assert not fields.residual[0].any()

    def test_consistent_translation_accumulates(self):
        """Test that repeated interior motion sums up."""
        iframe = np.zeros((64, 64, 3), dtype=np.uint8)
        step = np.full((4, 4, 2), 1, dtype=np.int16)
        zero = np.zeros((64, 64, 3), dtype=np.int16)
        gop = Gop(iframe=iframe, pframes=[PFrame(mv=step, residual=zero)] * 3)
        fields = accumulate(gop)
        assert tuple(fields.mv[3, 32, 32]) == (3, 3)

    def test_reconstruct_index_bounds(self):
        """Test out-of-range frame index."""
        gop = random_gop(np.random.default_rng(6), 2, 16, 16, 1)
        with pytest.raises(IndexError):
            reconstruct_from_accumulated(gop, accumulate(gop), 2)


class TestContainer:

    def make_stream(self):
        video = random_video(np.random.default_rng(7), frames=3, height=16, width=32)
        return encode(video, gop_size=2, search_range=4, threads=1)

    def test_golden_header_and_size(self):
        """Test the exact header bytes and total length."""
        blob = stream_to_bytes(self.make_stream())
        header = b"GOPS" + bytes([1, 0, 0, 0, 2, 0, 4, 0, 16, 0, 32, 0, 2, 0, 0, 0])
        assert blob[:20] == header
        assert len(blob) == 20 + (1536 + 2 + 8 + 3072) + (1536 + 2)

    def test_round_trip_through_file(self, tmp_path):
        """Test writing and reading a container file."""
        stream = self.make_stream()
        path = tmp_path / "clip.gops"
        write_stream(stream, path)
        assert read_stream(path).equals(stream)
        header = read_header(path)
        assert (header.gop_size, header.search_range) == (2, 4)
        assert (header.height, header.width, header.gop_count) == (16, 32, 2)

    def test_every_truncation_fails(self):
        """Test that every strict prefix raises a format error."""
        blob = stream_to_bytes(self.make_stream())
        for cut in range(len(blob)):
            with pytest.raises(StreamFormatError):
                stream_from_bytes(blob[:cut])

    def test_trailing_bytes(self):
        """Test extra bytes after the last GOP."""
        blob = stream_to_bytes(self.make_stream())
        with pytest.raises(StreamFormatError, match="trailing") as info:
            stream_from_bytes(blob + b"\x00\x00")
        assert info.value.offset == len(blob)

    def test_bad_magic_and_version(self):
        """Test header validation offsets."""
        blob = stream_to_bytes(self.make_stream())
        with pytest.raises(StreamFormatError) as info:
            stream_from_bytes(b"GOPX" + blob[4:])
        assert info.value.offset == 0
        with pytest.raises(StreamFormatError) as info:
            stream_from_bytes(blob[:4] + b"\x02\x00\x00\x00" + blob[8:])
        assert info.value.offset == 4

    def test_motion_outside_search_range(self):
        """Test a motion vector larger than the declared search range."""
        blob = bytearray(stream_to_bytes(self.make_stream()))
        mv_offset = 20 + 1536 + 2
        blob[mv_offset : mv_offset + 2] = (9).to_bytes(2, "little", signed=True)
        with pytest.raises(StreamFormatError, match="search range"):
            stream_from_bytes(bytes(blob))


class TestSampling:

    def test_single_clip_indices(self):
        """Test uniform centres for one clip."""
        assert clip_indices(24, 8).tolist() == [1, 4, 7, 10, 13, 16, 19, 22]

    def test_full_length_clip_takes_every_frame(self):
        """Test that all clips coincide when the clip spans the video."""
        for clip in range(3):
            assert clip_indices(8, 8, clip, 3).tolist() == list(range(8))

    @given(st.integers(1, 40), st.data())
    @settings(max_examples=50, deadline=None)
    def test_indices_sorted_and_in_range(self, total, data):
        """Test index bounds for any clip layout."""
        n_frames = data.draw(st.integers(1, total))
        n_clips = data.draw(st.integers(1, 5))
        clip = data.draw(st.integers(0, n_clips - 1))
        idx = clip_indices(total, n_frames, clip, n_clips)
        assert len(idx) == n_frames
        assert idx.min() >= 0 and idx.max() < total
        assert np.all(np.diff(idx) >= 0)

    def test_too_many_frames(self):
        """Test sampling more frames than the video holds."""
        with pytest.raises(PreconditionError):
            clip_indices(4, 5)

    def test_clip_shapes_and_scaling(self):
        """Test tensor layout and normalisation of a test-mode clip."""
        stream = encode(random_video(np.random.default_rng(8), frames=6), gop_size=3, search_range=4)
        clip = sample_clip(stream, n_frames=4, crop=(16, 24))
        assert clip.rgb_clip.shape == (1, 3, 4, 16, 24)
        assert clip.mvr_clip.shape == (1, 5, 4, 16, 24)
        assert 0.0 <= clip.rgb_clip.data.min() and clip.rgb_clip.data.max() <= 1.0
        assert np.abs(clip.mvr_clip.data[:, :2]).max() <= 6 * 4 / 4

    def test_train_flip_mirrors_and_negates_dx(self):
        """Test horizontal flip against the deterministic test-mode clip."""
        stream = encode(random_video(np.random.default_rng(9), frames=4), gop_size=4, search_range=2)
        features = extract_features(stream)
        reference = sample_clip(None, n_frames=4, crop=(32, 32), features=features)
        for seed in range(20):
            draws = np.random.default_rng(seed)
            draws.integers(0, 1)
            draws.integers(0, 1)
            if draws.random() < 0.5:
                break
        clip = sample_clip(
            None, n_frames=4, crop=(32, 32), mode="train", rng=np.random.default_rng(seed), features=features
        )
        np.testing.assert_array_equal(clip.rgb_clip.data, reference.rgb_clip.data[..., ::-1])
        np.testing.assert_array_equal(clip.mvr_clip.data[:, 0], reference.mvr_clip.data[:, 0, ..., ::-1])
        np.testing.assert_array_equal(clip.mvr_clip.data[:, 1], -reference.mvr_clip.data[:, 1, ..., ::-1])

    def test_crop_too_large(self):
        """Test a crop that exceeds the frame."""
        stream = encode(random_video(np.random.default_rng(10), frames=2, height=16, width=16), search_range=1)
        with pytest.raises(PreconditionError):
            sample_clip(stream, n_frames=2, crop=(32, 16))

    def test_needs_stream_or_features(self):
        """Test the missing-input precondition."""
        with pytest.raises(PreconditionError):
            sample_clip(None)

"""Tests for binary tensor records."""

import struct

import numpy as np
import pytest

from compressed_action.errors import StreamFormatError
from compressed_action.tensor.serialize import MAGIC, load_tensor, save_tensor, tensor_from_bytes, tensor_to_bytes


class TestTensorRecords:

    def test_header_layout(self):
        """Test magic, version, padded shape and dtype tag."""
        blob = tensor_to_bytes(np.zeros((2, 3), dtype=np.float32))
        magic, version, *shape, tag = struct.unpack_from("<4sI5QB", blob)
        assert magic == MAGIC
        assert version == 1
        assert shape == [1, 1, 1, 2, 3]
        assert tag == 1
        assert len(blob) == 49 + 6 * 4

    def test_preserves_values_and_dtype(self, tmp_path):
        """Test a file round trip for both float widths."""
        rng = np.random.default_rng(0)
        for dtype in (np.float64, np.float32):
            array = rng.normal(size=(2, 3, 1, 4, 5)).astype(dtype)
            path = tmp_path / f"t_{np.dtype(dtype).name}.bin"
            save_tensor(array, path)
            loaded = load_tensor(path)
            assert loaded.dtype == dtype
            np.testing.assert_array_equal(loaded, array)

    def test_records_concatenate(self):
        """Test parsing two records from one buffer."""
        blob = tensor_to_bytes(np.ones(3)) + tensor_to_bytes(np.full((1, 2), 7.0))
        first, offset = tensor_from_bytes(blob)
        second, end = tensor_from_bytes(blob, offset)
        assert first.sum() == 3.0
        assert second.sum() == 14.0
        assert end == len(blob)

    def test_every_truncation_fails(self):
        """Test that any prefix of a record is rejected."""
        blob = tensor_to_bytes(np.arange(4.0))
        for cut in range(len(blob)):
            with pytest.raises(StreamFormatError):
                tensor_from_bytes(blob[:cut])

    def test_bad_magic(self):
        """Test a record with the wrong magic."""
        blob = b"XXXX" + tensor_to_bytes(np.ones(1))[4:]
        with pytest.raises(StreamFormatError, match="magic") as info:
            tensor_from_bytes(blob)
        assert info.value.offset == 0

    def test_trailing_bytes(self, tmp_path):
        """Test a file with garbage after its record."""
        path = tmp_path / "t.bin"
        path.write_bytes(tensor_to_bytes(np.ones(1)) + b"\x00")
        with pytest.raises(StreamFormatError, match="trailing"):
            load_tensor(path)

    def test_oversized_shape_is_truncation(self):
        """Test extents whose byte count exceeds 64 bits."""
        header = struct.pack("<4sI5QB", MAGIC, 1, 2**32, 2**32, 1, 1, 1, 0)
        with pytest.raises(StreamFormatError, match="truncated tensor data") as info:
            tensor_from_bytes(header + b"\x00" * 64)
        assert info.value.offset == len(header) + 64

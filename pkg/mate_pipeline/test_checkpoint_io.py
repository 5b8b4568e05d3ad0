"""Checkpoint container tests"""

import struct

import numpy as np
import pytest

from checkpoint_io import MAGIC, decode_tensors, encode_tensors, load_checkpoint, load_into, save_checkpoint
from errors import CheckpointMismatchError, DataError
from nn_core import Tensor


class TestContainer:
    def test_float64_bits_survive(self, tmp_path):
        values = np.array([np.pi, -0.0, 5e-324, np.finfo(np.float64).max, 1.0 / 3.0])
        path = save_checkpoint(tmp_path / "a.mate", {"x": values})
        loaded = load_checkpoint(path)["x"]
        assert loaded.dtype == np.float64
        assert loaded.tobytes() == values.tobytes()

    def test_mixed_dtypes_and_ranks(self):
        tensors = {
            "scalar": np.array(2.5),
            "f32": np.arange(6, dtype=np.float32).reshape(2, 3),
            "ints": np.array([1, -2, 3], dtype=np.int32),
            "flags": np.array([True, False]),
        }
        decoded = decode_tensors(encode_tensors(tensors))
        assert list(decoded) == list(tensors)
        assert decoded["scalar"].shape == ()
        assert decoded["f32"].dtype == np.float32
        assert decoded["ints"].dtype == np.int64
        assert decoded["flags"].dtype == np.uint8
        np.testing.assert_array_equal(decoded["ints"], [1, -2, 3])

    def test_header_layout(self):
        payload = encode_tensors({"w": np.zeros(2)})
        assert payload[:4] == MAGIC
        assert struct.unpack_from("<II", payload, 4) == (1, 1)

    def test_bad_magic(self):
        with pytest.raises(DataError):
            decode_tensors(b"NOPE" + bytes(8))

    def test_truncated_payload(self):
        payload = encode_tensors({"w": np.ones(4)})
        with pytest.raises(DataError):
            decode_tensors(payload[:20])
        with pytest.raises(DataError, match="truncated"):
            decode_tensors(payload[:8])

    def test_truncated_inside_values(self):
        payload = encode_tensors({"w": np.arange(100.0)})
        with pytest.raises(DataError, match="truncated checkpoint"):
            decode_tensors(payload[:-40])
        with pytest.raises(DataError, match="truncated checkpoint"):
            decode_tensors(payload[:-1])

    def test_truncated_file_on_disk(self, tmp_path):
        path = save_checkpoint(tmp_path / "final.mate", {"w": np.arange(10.0), "b": np.zeros(3)})
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "absent.mate")

    def test_no_temp_file_left(self, tmp_path):
        save_checkpoint(tmp_path / "ckpt" / "final.mate", {"w": np.ones(1)})
        assert [p.name for p in (tmp_path / "ckpt").iterdir()] == ["final.mate"]


class TestLoadInto:
    def test_values_copied(self):
        param = Tensor(np.zeros(3), requires_grad=True)
        load_into([("w", param)], {"w": np.array([1.0, 2.0, 3.0])})
        np.testing.assert_array_equal(param.data, [1.0, 2.0, 3.0])

    def test_shape_mismatch_names_tensor(self):
        param = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(CheckpointMismatchError, match="'w'"):
            load_into([("w", param)], {"w": np.zeros(4)})

    def test_missing_tensor_leaves_params_untouched(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        b = Tensor(np.zeros(2), requires_grad=True)
        with pytest.raises(CheckpointMismatchError, match="'b'"):
            load_into([("a", a), ("b", b)], {"a": np.ones(2)})
        np.testing.assert_array_equal(a.data, np.zeros(2))

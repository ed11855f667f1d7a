"""MXT1 tensor file round trips and validation."""

import numpy as np
import pytest

from mxsim.blocks import BlockAxis, quantize_matrix
from mxsim.formats import FP4_E2M1, FP8_E4M3, FP8_E5M2
from mxsim.mxt import TensorFileError, pack_nibbles, read_mxt, unpack_nibbles, write_mxt


def test_pack_unpack_nibbles():
    vals = np.array([1, 2, 3, 4, 5], dtype=np.uint8)
    raw = pack_nibbles(vals)
    assert raw == bytes([0x21, 0x43, 0x05])
    assert unpack_nibbles(raw, 5).tolist() == [1, 2, 3, 4, 5]


@pytest.mark.parametrize("fmt", [FP8_E5M2, FP8_E4M3, FP4_E2M1], ids=lambda f: f.name)
@pytest.mark.parametrize("axis", [BlockAxis.ROW, BlockAxis.COL])
def test_roundtrip(tmp_path, fmt, axis):
    rng = np.random.default_rng(31)
    arr = rng.lognormal(0, 2, size=(8, 16)).astype(np.float32)
    m = quantize_matrix(arr, fmt, 8, axis)
    path = tmp_path / "t.mxt"
    write_mxt(path, m)
    back = read_mxt(path)
    assert back.fmt is fmt
    assert back.k == m.k and back.block_axis is axis
    assert np.array_equal(back.elements, m.elements)
    assert np.array_equal(back.scales, m.scales)


def test_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.mxt"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(TensorFileError):
        read_mxt(path)


def test_rejects_bad_format_code(tmp_path):
    rng = np.random.default_rng(32)
    m = quantize_matrix(rng.normal(size=(4, 8)).astype(np.float32), FP8_E4M3, 4, BlockAxis.ROW)
    path = tmp_path / "t.mxt"
    write_mxt(path, m)
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(TensorFileError):
        read_mxt(path)


def test_rejects_truncated(tmp_path):
    rng = np.random.default_rng(33)
    m = quantize_matrix(rng.normal(size=(4, 8)).astype(np.float32), FP8_E4M3, 4, BlockAxis.ROW)
    path = tmp_path / "t.mxt"
    write_mxt(path, m)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(TensorFileError):
        read_mxt(path)

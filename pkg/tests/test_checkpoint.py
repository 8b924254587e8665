import struct

import numpy as np
import pytest

from biodistill.errors import DataError
from biodistill.tensor import load_checkpoint, param, save_checkpoint


def test_roundtrip_mixed_dtypes(tmp_path):
    path = tmp_path / "model.bsdk"
    tensors = {
        "w": np.arange(6, dtype=np.float32).reshape(2, 3),
        "moments": np.linspace(0, 1, 4, dtype=np.float64),
        "step": np.asarray(7, dtype=np.int64),
        "from_tensor": param(np.ones((2, 2), dtype=np.float32)),
    }
    save_checkpoint(path, tensors)
    back = load_checkpoint(path)
    assert list(back) == ["w", "moments", "step", "from_tensor"]
    np.testing.assert_array_equal(back["w"], tensors["w"])
    assert back["w"].dtype == np.float32
    np.testing.assert_array_equal(back["moments"], tensors["moments"])
    assert int(back["step"]) == 7
    back["w"][0, 0] = 99.0  # loaded arrays must be writable


def test_exact_byte_layout(tmp_path):
    path = tmp_path / "tiny.bsdk"
    arr = np.array([1.5, -2.0], dtype=np.float32)
    save_checkpoint(path, {"ab": arr})
    raw = path.read_bytes()
    expected = (
        b"BSDK"
        + struct.pack("<II", 1, 1)
        + struct.pack("<H", 2)
        + b"ab"
        + struct.pack("<BB", 0, 1)
        + struct.pack("<I", 2)
        + arr.tobytes()
    )
    assert raw == expected


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.bsdk"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(DataError, match="magic"):
        load_checkpoint(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "model.bsdk"
    save_checkpoint(path, {"w": np.ones(8, dtype=np.float32)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(DataError, match="truncated"):
        load_checkpoint(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "model.bsdk"
    save_checkpoint(path, {"w": np.ones(2, dtype=np.float32)})
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(DataError, match="trailing"):
        load_checkpoint(path)


def test_unknown_dtype_code_rejected(tmp_path):
    path = tmp_path / "model.bsdk"
    body = (
        b"BSDK"
        + struct.pack("<II", 1, 1)
        + struct.pack("<H", 1)
        + b"w"
        + struct.pack("<BB", 9, 0)
    )
    path.write_bytes(body)
    with pytest.raises(DataError, match="dtype"):
        load_checkpoint(path)


def test_scalar_rank_zero_roundtrip(tmp_path):
    path = tmp_path / "s.bsdk"
    save_checkpoint(path, {"x": np.asarray(3.25, dtype=np.float64)})
    back = load_checkpoint(path)
    assert back["x"].shape == ()
    assert float(back["x"]) == 3.25


def test_overwrite_is_atomic_enough(tmp_path):
    # second save fully replaces the first, no stale trailing data
    path = tmp_path / "m.bsdk"
    save_checkpoint(path, {"w": np.ones(100, dtype=np.float64)})
    save_checkpoint(path, {"w": np.ones(2, dtype=np.float32)})
    back = load_checkpoint(path)
    assert back["w"].shape == (2,)

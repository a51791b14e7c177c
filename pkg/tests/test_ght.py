"""Tensor file format: layout, round-trips, validation."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hedgegrad import ght
from hedgegrad.errors import NonFiniteError, ValidationError


def test_header_layout_matches_documented_format(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = tmp_path / "t.ght"
    ght.save(path, arr)
    blob = path.read_bytes()
    assert blob[:8] == b"GHTENSR1"
    assert struct.unpack_from("<I", blob, 8) == (2,)
    assert struct.unpack_from("<II", blob, 12) == (2, 3)
    assert len(blob) == 8 + 4 + 8 + 6 * 4 == ght.file_size((2, 3))
    payload = np.frombuffer(blob, dtype="<f4", offset=20)
    np.testing.assert_array_equal(payload.reshape(2, 3), arr)


@pytest.mark.parametrize(
    "shape", [(1,), (7,), (2, 3), (4, 1, 5), (2, 3, 4, 5), (1, 1, 1, 1)]
)
def test_round_trip_bit_exact(tmp_path, shape):
    rng = np.random.default_rng(0)
    arr = rng.standard_normal(shape).astype(np.float32)
    path = tmp_path / "t.ght"
    ght.save(path, arr)
    back = ght.load(path)
    assert back.dtype == np.float32
    assert back.shape == shape
    assert arr.tobytes() == back.tobytes()


def test_round_trip_preserves_special_values(tmp_path):
    arr = np.array([-0.0, 0.0, np.float32(1e-40), -np.float32(1e-40), 3.14], dtype=np.float32)
    path = tmp_path / "t.ght"
    ght.save(path, arr)
    back = ght.load(path)
    assert arr.tobytes() == back.tobytes()
    assert np.signbit(back[0]) and not np.signbit(back[1])


@settings(max_examples=50, deadline=None)
@given(
    data=st.data(),
    shape=st.lists(st.integers(1, 6), min_size=1, max_size=4).map(tuple),
)
def test_round_trip_property(tmp_path_factory, data, shape):
    seed = data.draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    arr = (rng.standard_normal(shape) * 10).astype(np.float32)
    path = tmp_path_factory.mktemp("ght") / "t.ght"
    ght.save(path, arr)
    back = ght.load(path)
    assert back.shape == arr.shape
    assert arr.tobytes() == back.tobytes()


def test_save_rejects_rank_zero_and_rank_five(tmp_path):
    with pytest.raises(ValidationError):
        ght.save(tmp_path / "a.ght", np.float32(1.0))
    with pytest.raises(ValidationError):
        ght.save(tmp_path / "b.ght", np.ones((1, 1, 1, 1, 1), dtype=np.float32))


def test_save_rejects_non_finite(tmp_path):
    with pytest.raises(NonFiniteError):
        ght.save(tmp_path / "a.ght", np.array([1.0, np.nan], dtype=np.float32))
    with pytest.raises(NonFiniteError):
        ght.save(tmp_path / "b.ght", np.array([np.inf], dtype=np.float32))


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "t.ght"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(ValidationError, match="magic"):
        ght.load(path)


def test_load_rejects_bad_rank(tmp_path):
    path = tmp_path / "t.ght"
    path.write_bytes(b"GHTENSR1" + struct.pack("<I", 5) + b"\x00" * 20)
    with pytest.raises(ValidationError):
        ght.load(path)
    path.write_bytes(b"GHTENSR1" + struct.pack("<I", 0))
    with pytest.raises(ValidationError):
        ght.load(path)


def test_load_rejects_truncated_payload(tmp_path):
    arr = np.ones((2, 3), dtype=np.float32)
    path = tmp_path / "t.ght"
    ght.save(path, arr)
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])
    with pytest.raises(ValidationError):
        ght.load(path)


def test_load_rejects_trailing_garbage(tmp_path):
    arr = np.ones((2, 3), dtype=np.float32)
    path = tmp_path / "t.ght"
    ght.save(path, arr)
    path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
    with pytest.raises(ValidationError):
        ght.load(path)


def test_load_rejects_non_finite_payload(tmp_path):
    path = tmp_path / "t.ght"
    header = b"GHTENSR1" + struct.pack("<I", 1) + struct.pack("<I", 1)
    path.write_bytes(header + struct.pack("<f", np.inf))
    with pytest.raises(NonFiniteError):
        ght.load(path)


def test_load_rejects_zero_extent(tmp_path):
    path = tmp_path / "t.ght"
    path.write_bytes(b"GHTENSR1" + struct.pack("<I", 2) + struct.pack("<II", 2, 0))
    with pytest.raises(ValidationError):
        ght.load(path)

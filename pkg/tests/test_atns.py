import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advlab.atns import MAGIC, AtnsFormatError, read_tensor, write_tensor


def test_roundtrip(tmp_path):
    arr = np.random.default_rng(0).normal(size=(3, 4, 5)).astype(np.float32)
    p = tmp_path / "t.atns"
    write_tensor(p, arr)
    back = read_tensor(p)
    assert back.dtype == np.float32
    assert np.array_equal(back, arr)


def test_header_layout(tmp_path):
    arr = np.zeros((2, 3), dtype=np.float32)
    p = tmp_path / "t.atns"
    write_tensor(p, arr)
    raw = p.read_bytes()
    assert raw[:5] == MAGIC
    assert raw[5] == 0  # f32 tag
    assert raw[6] == 2  # rank
    assert int.from_bytes(raw[7:11], "little") == 2
    assert int.from_bytes(raw[11:15], "little") == 3
    assert len(raw) == 15 + 4 * 6


def test_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.atns"
    p.write_bytes(b"NOPE!" + bytes(10))
    with pytest.raises(AtnsFormatError, match="magic"):
        read_tensor(p)


def test_rejects_truncated_payload(tmp_path):
    arr = np.ones((4,), dtype=np.float32)
    p = tmp_path / "t.atns"
    write_tensor(p, arr)
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(AtnsFormatError, match="payload"):
        read_tensor(p)


@settings(max_examples=20, deadline=None)
@given(
    st.lists(st.integers(1, 6), min_size=0, max_size=4),
    st.integers(0, 2**31 - 1),
)
def test_roundtrip_property(shape, seed):
    import tempfile

    arr = np.random.default_rng(seed).normal(size=tuple(shape)).astype(np.float32)
    with tempfile.TemporaryDirectory() as d:
        p = f"{d}/h.atns"
        write_tensor(p, arr)
        assert np.array_equal(read_tensor(p), arr)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from zerosub.features import (
    FeatureFormatError, cmvn, decode_features, encode_features, read_feature_file,
    splice, write_feature_file,
)

GOLDEN = b"ZRSF" + b"\x01\x00\x00\x00" * 3 + b"\x00\x00\x80\x3f"


def test_golden_single_frame():
    buf = encode_features(np.array([[1.0]]))
    assert buf == GOLDEN
    assert len(buf) == 20
    np.testing.assert_array_equal(decode_features(GOLDEN), [[1.0]])


def test_zero_frames_allowed():
    m = decode_features(encode_features(np.zeros((0, 3))))
    assert m.shape == (0, 3)


@pytest.mark.parametrize("buf,msg", [
    (b"ZRS", "truncated header"),
    (b"XXXX" + GOLDEN[4:], "bad magic"),
    (GOLDEN[:-1], "truncated payload"),
    (GOLDEN + b"\x00", "trailing"),
    (b"ZRSF\x02\x00\x00\x00" + GOLDEN[8:], "version"),
    (b"ZRSF\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x00\x00", "positive"),
])
def test_decode_errors(buf, msg):
    with pytest.raises(FeatureFormatError, match=msg):
        decode_features(buf)


@pytest.mark.parametrize("bad", [np.zeros(3), np.zeros((2, 0)), np.array([[np.nan]])])
def test_encode_rejects(bad):
    with pytest.raises(FeatureFormatError):
        encode_features(bad)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(0, 20), st.integers(1, 6)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_roundtrip(m):
    out = decode_features(encode_features(m))
    assert out.dtype == np.float32
    np.testing.assert_array_equal(out, m)


def test_file_roundtrip(tmp_path):
    m = np.arange(12, dtype=np.float32).reshape(4, 3)
    write_feature_file(tmp_path / "a.zrsf", m)
    np.testing.assert_array_equal(read_feature_file(tmp_path / "a.zrsf"), m)


def test_cmvn_example():
    out = cmvn(np.array([[1.0, 5.0], [3.0, 5.0]]))
    np.testing.assert_allclose(out, [[-1.0, 0.0], [1.0, 0.0]])


def test_cmvn_single_frame_is_zero():
    np.testing.assert_array_equal(cmvn(np.array([[2.0, -3.0]])), [[0.0, 0.0]])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 5)),
              elements=st.floats(-100, 100)))
def test_cmvn_moments_and_idempotence(m):
    out = cmvn(m)
    assert np.all(np.abs(out.mean(axis=0)) < 1e-8)
    var = out.var(axis=0)
    assert np.all((np.abs(var - 1) < 1e-6) | (var == 0))
    np.testing.assert_allclose(cmvn(out), out, atol=1e-6)


def test_splice_example():
    m = np.array([[1.0], [2.0], [3.0]])
    np.testing.assert_array_equal(splice(m, 1), [[1, 1, 2], [1, 2, 3], [2, 3, 3]])


def test_splice_zero_context_copies():
    m = np.ones((3, 2))
    out = splice(m, 0)
    np.testing.assert_array_equal(out, m)
    assert out is not m


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 4))
def test_splice_shape_and_centre(T, D, n):
    m = np.arange(T * D, dtype=float).reshape(T, D)
    out = splice(m, n)
    assert out.shape == (T, D * (2 * n + 1))
    np.testing.assert_array_equal(out[:, n * D:(n + 1) * D], m)


def test_splice_errors():
    with pytest.raises(ValueError):
        splice(np.ones((2, 2)), -1)
    with pytest.raises(FeatureFormatError):
        splice(np.ones((0, 2)), 1)

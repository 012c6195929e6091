"""Frame feature matrices: binary container, per-utterance CMVN and splicing.

A feature matrix is a ``(T, D)`` numpy array, one row per 10 ms frame.
On disk it is stored as::

    b"ZRSF" | version:u32 | T:u32 | D:u32 | T*D float32, row-major

with every integer and float little-endian.
"""
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ZRSF"
VERSION = 1
_HEADER = struct.Struct("<4sIII")

VAR_FLOOR = 1e-10


class FeatureFormatError(ValueError):
    """Raised for malformed feature files or invalid feature matrices."""


def as_frame_matrix(m, dtype=None):
    """Validate ``m`` as a finite 2-D frame matrix with ``D >= 1``."""
    m = np.asarray(m, dtype=dtype)
    if m.ndim != 2:
        raise FeatureFormatError(f"expected a 2-D frame matrix, got shape {m.shape}")
    if m.shape[1] == 0:
        raise FeatureFormatError("frame dimension D must be positive")
    if not np.all(np.isfinite(m)):
        raise FeatureFormatError("frame matrix contains non-finite values")
    return m


def encode_features(m):
    m = as_frame_matrix(m)
    T, D = m.shape
    payload = np.ascontiguousarray(m, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, VERSION, T, D) + payload


def decode_features(buf):
    if len(buf) < _HEADER.size:
        raise FeatureFormatError("truncated header")
    magic, version, T, D = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FeatureFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FeatureFormatError(f"unsupported feature file version {version}")
    if D == 0:
        raise FeatureFormatError("frame dimension D must be positive")
    expected = _HEADER.size + 4 * T * D
    if len(buf) < expected:
        raise FeatureFormatError(
            f"truncated payload: {len(buf)} bytes, expected {expected}"
        )
    if len(buf) > expected:
        raise FeatureFormatError(f"trailing bytes after payload ({len(buf) - expected})")
    data = np.frombuffer(buf, dtype="<f4", count=T * D, offset=_HEADER.size)
    return data.reshape(T, D).astype(np.float32)


def write_feature_file(path, m):
    Path(path).write_bytes(encode_features(m))


def read_feature_file(path):
    return decode_features(Path(path).read_bytes())


def cmvn(m):
    """Per-utterance mean and variance normalization.

    Uses the population variance; dimensions whose variance falls below
    ``VAR_FLOOR`` come out as zeros.
    """
    m = as_frame_matrix(m, dtype=np.float64)
    if m.shape[0] == 0:
        raise FeatureFormatError("cmvn needs at least one frame")
    centered = m - m.mean(axis=0)
    var = centered.var(axis=0)
    const = var < VAR_FLOOR
    std = np.sqrt(np.where(const, 1.0, var))
    out = centered / std
    out[:, const] = 0.0
    return out


def splice(m, n):
    """Stack each frame with its ``n`` left and right neighbours.

    Edges are padded by repeating the first/last frame, so the output keeps
    ``T`` rows and has ``D * (2n + 1)`` columns ordered from ``t-n`` to ``t+n``.
    """
    m = as_frame_matrix(m)
    if n < 0:
        raise ValueError("context radius must be >= 0")
    T = m.shape[0]
    if T == 0:
        raise FeatureFormatError("splice needs at least one frame")
    if n == 0:
        return m.copy()
    idx = np.clip(np.arange(T)[:, None] + np.arange(-n, n + 1)[None, :], 0, T - 1)
    return m[idx].reshape(T, -1)

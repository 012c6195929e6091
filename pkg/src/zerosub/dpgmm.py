"""Dirichlet-process Gaussian mixture clustering of pooled frames.

Inference is collapsed Gibbs sampling with a conjugate per-dimension
Normal-Inverse-Gamma prior on diagonal Gaussians. During a sweep each frame
chooses among the occupied clusters (weight ``n_k``, Student-t posterior
predictive) and a fresh cluster (weight ``alpha``, prior predictive). Empty
clusters are pruned and the survivors renumbered after every sweep.

The fitted model keeps posterior-mode Gaussians; frame labels are then the
argmax of ``n_k / N * N(x; mean_k, var_k)`` over existing clusters only.
Cluster labels are 1-based throughout.
"""
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .features import FeatureFormatError, as_frame_matrix

MODEL_MAGIC = b"ZRSM"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_SCALARS = struct.Struct("<dddQ")
_B0_FLOOR = 1e-8
_STREAM = 0xD9


@dataclass(frozen=True)
class DpgmmConfig:
    """Sampler settings. ``m0``/``b0`` default to the pooled mean/variance."""

    alpha: float = 1.0
    sweeps: int = 100
    seed: int = 0
    init_clusters: int = 10
    kappa0: float = 1e-2
    a0: float = 1.0
    m0: tuple = None
    b0: tuple = None

    def validate(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.sweeps < 0:
            raise ValueError("sweeps must be >= 0")
        if self.init_clusters < 1:
            raise ValueError("init_clusters must be >= 1")
        if not (self.kappa0 > 0 and self.a0 > 0):
            raise ValueError("kappa0 and a0 must be > 0")
        if self.b0 is not None and min(self.b0) <= 0:
            raise ValueError("b0 must be > 0")
        return self


@dataclass
class DpgmmModel:
    counts: np.ndarray      # (K,) frames per cluster
    means: np.ndarray       # (K, D)
    variances: np.ndarray   # (K, D)
    alpha: float
    m0: np.ndarray
    kappa0: float
    a0: float
    b0: np.ndarray
    seed: int = 0
    sweep_sizes: list = field(default_factory=list, repr=False)

    @property
    def K(self):
        return int(self.counts.shape[0])

    @property
    def dim(self):
        return int(self.means.shape[1])

    @property
    def N(self):
        return int(self.counts.sum())


def _posterior_mode(counts, S1, S2, m0, kappa0, a0, b0):
    n = counts[:, None].astype(np.float64)
    kn = kappa0 + n
    means = (kappa0 * m0 + S1) / kn
    mean = S1 / n
    scatter = np.maximum(S2 - S1 * mean, 0.0)
    bn = b0 + 0.5 * scatter + kappa0 * n * (mean - m0) ** 2 / (2.0 * kn)
    an = a0 + 0.5 * n
    return means, bn / (an + 1.0)


def _accumulate(X, z, K):
    n = np.bincount(z, minlength=K).astype(np.int64)
    S1 = np.zeros((K, X.shape[1]))
    S2 = np.zeros((K, X.shape[1]))
    np.add.at(S1, z, X)
    np.add.at(S2, z, X * X)
    return n, S1, S2


def dpgmm_fit(frames, config=DpgmmConfig(), return_labels=False):
    """Fit a DPGMM to pooled frames ``(N, D)``.

    The result is a deterministic function of ``(frames, config)``. With
    ``return_labels`` the 1-based sampler labels of the last sweep are also
    returned.
    """
    config.validate()
    X = np.ascontiguousarray(as_frame_matrix(frames, dtype=np.float64))
    N, D = X.shape
    if N == 0:
        raise ValueError("dpgmm_fit needs at least one frame")
    m0 = np.asarray(config.m0 if config.m0 is not None else X.mean(axis=0), dtype=np.float64)
    b0 = np.asarray(config.b0 if config.b0 is not None else X.var(axis=0), dtype=np.float64)
    if m0.shape != (D,) or b0.shape != (D,):
        raise ValueError("prior m0/b0 must have one entry per dimension")
    b0 = np.maximum(b0, _B0_FLOOR)

    rng = np.random.default_rng([int(config.seed) & (2**64 - 1), _STREAM])
    k0 = min(config.init_clusters, N)
    z = rng.integers(0, k0, size=N).astype(np.int64)
    _, z = np.unique(z, return_inverse=True)
    z = z.astype(np.int64)
    K = int(z.max()) + 1
    cap = N + 1
    n = np.zeros(cap, dtype=np.int64)
    S1 = np.zeros((cap, D))
    S2 = np.zeros((cap, D))
    n[:K], S1[:K], S2[:K] = _accumulate(X, z, K)

    sizes = []
    for _ in range(config.sweeps):
        order = rng.permutation(N).astype(np.int64)
        u = rng.random(N)
        kmax = _kernels.gibbs_sweep(X, z, n, S1, S2, order, u, m0, float(config.kappa0),
                                    float(config.a0), b0, float(config.alpha), K)
        # prune empties, keep survivors in slot order
        keep = np.flatnonzero(n[:kmax] > 0)
        remap = np.full(kmax, -1, dtype=np.int64)
        remap[keep] = np.arange(keep.shape[0])
        z = remap[z]
        K = keep.shape[0]
        n[:] = 0
        S1[:] = 0.0
        S2[:] = 0.0
        n[:K], S1[:K], S2[:K] = _accumulate(X, z, K)
        sizes.append(K)

    means, variances = _posterior_mode(n[:K], S1[:K], S2[:K], m0, config.kappa0, config.a0, b0)
    model = DpgmmModel(n[:K].copy(), means, variances, float(config.alpha), m0,
                       float(config.kappa0), float(config.a0), b0, int(config.seed), sizes)
    if return_labels:
        return model, z + 1
    return model


def log_weighted_densities(model, m):
    """``(T, K)`` matrix of ``log(n_k/N) + log N(x_t; mean_k, var_k)``."""
    m = as_frame_matrix(m, dtype=np.float64)
    if m.shape[1] != model.dim:
        raise FeatureFormatError(f"frame dim {m.shape[1]} != model dim {model.dim}")
    logw = np.log(model.counts / model.counts.sum())
    inv = 1.0 / model.variances
    const = logw - 0.5 * np.log(2.0 * np.pi * model.variances).sum(axis=1)
    out = np.empty((m.shape[0], model.K))
    for s in range(0, m.shape[0], 2048):
        x = m[s:s + 2048]
        quad = (x * x) @ inv.T - 2.0 * x @ (model.means * inv).T + (model.means ** 2 * inv).sum(1)
        out[s:s + 2048] = const - 0.5 * quad
    return out


def dpgmm_assign(model, m):
    """1-based cluster label per frame; ties go to the smaller index."""
    return np.argmax(log_weighted_densities(model, m), axis=1).astype(np.int64) + 1


def cluster_cdf(label_sequences):
    """Cumulative frame coverage of clusters sorted by size.

    Returns a list of ``(K_i, Q_i)``: the largest ``K_i`` clusters cover a
    fraction ``Q_i`` of all labels. Negative (removed) labels are ignored.
    """
    seqs = [np.asarray(s, dtype=np.int64) for s in label_sequences]
    labels = np.concatenate(seqs) if seqs else np.zeros(0, dtype=np.int64)
    labels = labels[labels >= 0]
    if labels.shape[0] == 0:
        raise ValueError("cluster_cdf needs at least one label")
    counts = np.bincount(labels)
    counts = np.sort(counts[counts > 0], kind="stable")[::-1]
    cum = np.cumsum(counts)
    total = cum[-1]
    return [(i + 1, float(c / total)) for i, c in enumerate(cum)]


def encode_model(model):
    K, D = model.K, model.dim
    parts = [
        _HEADER.pack(MODEL_MAGIC, MODEL_VERSION, K, D),
        _SCALARS.pack(model.alpha, model.kappa0, model.a0, int(model.seed) & (2**64 - 1)),
        np.asarray(model.m0, dtype="<f8").tobytes(),
        np.asarray(model.b0, dtype="<f8").tobytes(),
        np.asarray(model.counts, dtype="<u8").tobytes(),
        np.ascontiguousarray(model.means, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.variances, dtype="<f8").tobytes(),
    ]
    return b"".join(parts)


def decode_model(buf):
    if len(buf) < _HEADER.size + _SCALARS.size:
        raise FeatureFormatError("truncated model header")
    magic, version, K, D = _HEADER.unpack_from(buf)
    if magic != MODEL_MAGIC:
        raise FeatureFormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise FeatureFormatError(f"unsupported model version {version}")
    if K == 0 or D == 0:
        raise FeatureFormatError("model needs K >= 1 and D >= 1")
    alpha, kappa0, a0, seed = _SCALARS.unpack_from(buf, _HEADER.size)
    off = _HEADER.size + _SCALARS.size
    expected = off + 8 * (2 * D + K + 2 * K * D)
    if len(buf) != expected:
        raise FeatureFormatError(f"model payload is {len(buf)} bytes, expected {expected}")

    def take(count, dtype):
        nonlocal off
        a = np.frombuffer(buf, dtype=dtype, count=count, offset=off)
        off += 8 * count
        return a

    m0 = take(D, "<f8").astype(np.float64)
    b0 = take(D, "<f8").astype(np.float64)
    counts = take(K, "<u8").astype(np.int64)
    means = take(K * D, "<f8").reshape(K, D).astype(np.float64)
    variances = take(K * D, "<f8").reshape(K, D).astype(np.float64)
    return DpgmmModel(counts, means, variances, alpha, m0, kappa0, a0, b0, seed)


def save_model(path, model):
    Path(path).write_bytes(encode_model(model))


def load_model(path):
    return decode_model(Path(path).read_bytes())

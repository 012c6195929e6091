"""Removal of frames that belong to the least frequent clusters.

Clusters are ranked by occupancy; the smallest number of top-ranked clusters
that together hold at least a fraction ``P`` of the frames is kept, and frames
labelled with any other cluster are marked ``REMOVED``. Labels are 1-based.
"""
from dataclasses import dataclass

import numpy as np

from .corpus import REMOVED

#: The retained-fraction values swept by ``filter --P-grid 0.6:0.95:0.05``.
DEFAULT_P_GRID = tuple(round(0.6 + 0.05 * i, 10) for i in range(8))


@dataclass(frozen=True)
class FilterResult:
    counts: np.ndarray            # c_k, indexed by cluster k-1
    sorted_counts: np.ndarray     # counts in descending order
    mapping: np.ndarray           # rank r (0-based) -> original 1-based cluster id
    K_cut: int
    removed_clusters: frozenset   # F
    removed_positions: np.ndarray # O, as frame positions in the input
    labels: np.ndarray            # input with removed positions set to REMOVED
    P: float

    @property
    def K(self):
        return int(self.counts.shape[0])

    @property
    def N(self):
        return int(self.counts.sum())

    @property
    def retained_fraction(self):
        return 1.0 - self.removed_positions.shape[0] / self.N if self.N else 1.0

    def report(self):
        return {
            "K": self.K,
            "N": self.N,
            "P": self.P,
            "K_cut": self.K_cut,
            "removed_frames": int(self.removed_positions.shape[0]),
            "retained_fraction": self.retained_fraction,
        }


def _check_P(P):
    if not 0.0 < P <= 1.0:
        raise ValueError(f"P must lie in (0, 1], got {P}")


def parse_p_grid(text):
    """Parse ``"a:b:step"`` into an inclusive grid of P values."""
    try:
        a, b, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise ValueError(f"P grid must look like a:b:step, got {text!r}") from None
    if step <= 0 or b < a:
        raise ValueError(f"empty P grid {text!r}")
    n = int(np.floor((b - a) / step + 1e-9)) + 1
    grid = [round(a + i * step, 10) for i in range(n)]
    for P in grid:
        _check_P(P)
    return grid


def count_labels(labels, K):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 1 or labels.max() > K):
        raise ValueError(f"labels must lie in 1..{K}")
    return np.bincount(labels, minlength=K + 1)[1:].astype(np.int64)


def sort_clusters(counts):
    """Descending counts and the rank -> 1-based cluster mapping (stable ties)."""
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape[0] == 0:
        raise ValueError("sort_clusters needs at least one cluster")
    order = np.argsort(-counts, kind="stable")
    return counts[order], order + 1


def compute_kcut(sorted_counts, N, P):
    """Smallest K' whose top-K' clusters cover a fraction >= P of N frames.

    ``P == 1`` keeps every cluster, including empty ones, so nothing is removed.
    """
    _check_P(P)
    sorted_counts = np.asarray(sorted_counts, dtype=np.int64)
    if N <= 0 or int(sorted_counts.sum()) != N:
        raise ValueError("N must be positive and equal the total count")
    if P == 1.0:
        return int(sorted_counts.shape[0])
    frac = np.cumsum(sorted_counts) / N
    return int(np.argmax(frac >= P)) + 1


def filter_labels(labels, K, P):
    labels = np.asarray(labels, dtype=np.int64)
    counts = count_labels(labels, K)
    sorted_counts, mapping = sort_clusters(counts)
    k_cut = compute_kcut(sorted_counts, int(counts.sum()), P)
    removed = mapping[k_cut:]
    drop = np.isin(labels, removed)
    out = labels.copy()
    out[drop] = REMOVED
    return FilterResult(counts, sorted_counts, mapping, k_cut,
                        frozenset(int(k) for k in removed), np.flatnonzero(drop),
                        out, float(P))

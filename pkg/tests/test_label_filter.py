import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zerosub.corpus import REMOVED
from zerosub.label_filter import (
    DEFAULT_P_GRID, compute_kcut, count_labels, filter_labels, parse_p_grid, sort_clusters,
)

from oracles import filter_oracle


def test_worked_example():
    # counts: c1=1, c2=5, c3=3, c4=1 -> ranked 2, 3, 1, 4
    labels = [2, 2, 3, 1, 2, 3, 2, 4, 3, 2]
    res = filter_labels(labels, 4, 0.8)
    np.testing.assert_array_equal(res.sorted_counts, [5, 3, 1, 1])
    np.testing.assert_array_equal(res.mapping, [2, 3, 1, 4])
    assert res.K_cut == 2
    assert res.removed_clusters == {1, 4}
    np.testing.assert_array_equal(res.removed_positions, [3, 7])
    assert res.labels[3] == REMOVED and res.labels[7] == REMOVED
    assert res.report()["retained_fraction"] == pytest.approx(0.8)


def test_exact_boundary_counts_as_covered():
    # top cluster holds exactly 70%
    labels = [1] * 7 + [2] * 3
    assert filter_labels(labels, 2, 0.7).K_cut == 1
    assert filter_labels(labels, 2, 0.71).K_cut == 2


def test_ties_keep_lower_cluster_id_first():
    counts, mapping = sort_clusters([2, 3, 3, 2])
    np.testing.assert_array_equal(mapping, [2, 3, 1, 4])


def test_p_one_removes_nothing_even_empty_clusters():
    res = filter_labels([1, 1, 3], 5, 1.0)
    assert res.K_cut == 5
    assert res.removed_clusters == frozenset()
    assert res.removed_positions.size == 0


@pytest.mark.parametrize("P", [0.0, -0.1, 1.01])
def test_bad_p(P):
    with pytest.raises(ValueError):
        filter_labels([1, 2], 2, P)


def test_label_range_checked():
    with pytest.raises(ValueError):
        count_labels([0, 1], 2)
    with pytest.raises(ValueError):
        count_labels([3], 2)


def test_kcut_needs_consistent_total():
    with pytest.raises(ValueError):
        compute_kcut([3, 1], 5, 0.5)


def test_parse_grid():
    assert parse_p_grid("0.6:0.95:0.05") == list(DEFAULT_P_GRID)
    assert parse_p_grid("0.5:0.5:0.1") == [0.5]
    for bad in ("0.6:0.95", "a:b:c", "0.9:0.6:0.1", "0.5:1.5:0.5"):
        with pytest.raises(ValueError):
            parse_p_grid(bad)


def _random_case(rng):
    K = int(rng.integers(1, 51))
    N = int(rng.integers(1, 1001))
    # skewed occupancy so many clusters are small or empty
    w = rng.dirichlet(np.full(K, 0.3))
    labels = rng.choice(np.arange(1, K + 1), size=N, p=w)
    P = float(rng.choice(list(DEFAULT_P_GRID) + [1.0]))
    return labels, K, P


def test_matches_enumeration_oracle():
    rng = np.random.default_rng(11)
    for _ in range(150):
        labels, K, P = _random_case(rng)
        res = filter_labels(labels, K, P)
        F, O, k_cut = filter_oracle(labels, K, P)
        assert res.K_cut == k_cut
        assert set(res.removed_clusters) == F
        assert res.removed_positions.tolist() == O


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 8), min_size=1, max_size=60),
       st.sampled_from(DEFAULT_P_GRID), st.sampled_from(DEFAULT_P_GRID))
def test_monotone_in_p(labels, P1, P2):
    lo, hi = sorted((P1, P2))
    a = filter_labels(labels, 8, lo)
    b = filter_labels(labels, 8, hi)
    assert a.K_cut <= b.K_cut
    assert b.removed_clusters <= a.removed_clusters
    assert a.retained_fraction >= lo - 1e-12
    assert b.retained_fraction >= hi - 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 10), min_size=1, max_size=80), st.sampled_from(DEFAULT_P_GRID))
def test_kept_labels_untouched_and_minimal(labels, P):
    res = filter_labels(labels, 10, P)
    kept = res.labels != REMOVED
    np.testing.assert_array_equal(res.labels[kept], np.asarray(labels)[kept])
    # one fewer cluster would not reach P
    if res.K_cut > 1:
        assert res.sorted_counts[:res.K_cut - 1].sum() / res.N < P

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zerosub.corpus import REMOVED
from zerosub.hmm import (
    AlignmentError, HmmModel, align_corpus, alignment_labels, collapse, hmm_em_train,
    hmm_init_uniform, load_hmm, save_hmm, uniform_durations, viterbi_align,
)
from zerosub.synth import SynthSpec, synthesize

from oracles import path_score, segmentation_oracle


def test_collapse_example():
    assert collapse([1, 3, 3, 3, 7, 10, 10]) == [1, 3, 7, 10]


def test_collapse_skips_removed():
    assert collapse([2, REMOVED, 2, 5, REMOVED]) == [2, 5]
    assert collapse([REMOVED, REMOVED]) == []
    assert collapse([]) == []


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([REMOVED, 1, 2, 3]), max_size=30))
def test_collapse_idempotent(seq):
    c = collapse(seq)
    assert collapse(c) == c
    assert all(a != b for a, b in zip(c, c[1:]))


def test_uniform_durations():
    assert uniform_durations(10, 3) == [3, 3, 4]
    assert uniform_durations(3, 3) == [1, 1, 1]
    with pytest.raises(AlignmentError):
        uniform_durations(2, 3)
    with pytest.raises(AlignmentError):
        uniform_durations(2, 0)


def _step_data():
    x = np.concatenate([np.zeros((4, 1)), np.full((6, 1), 10.0)])
    return {"u": x}, {"u": [1, 2]}


def test_uniform_init_estimates():
    feats, trans = _step_data()
    m = hmm_init_uniform(trans, feats)
    np.testing.assert_array_equal(m.units, [1, 2])
    # uniform split 5/5: unit 1 holds four zeros and one ten
    assert m.means[0, 0, 0] == pytest.approx(2.0)
    assert m.means[1, 0, 0] == pytest.approx(10.0)
    assert m.variances[1, 0, 0] == pytest.approx(1e-4)
    assert m.p_loop[0] == pytest.approx(0.8)


def test_p_loop_init_clamped():
    m = hmm_init_uniform({"u": [1, 2, 3]}, {"u": np.arange(3.0)[:, None]})
    assert m.p_loop[0] == 0.5


def test_boundary_detection():
    feats, trans = _step_data()
    m = hmm_init_uniform(trans, feats)
    ali = viterbi_align(m, feats["u"], trans["u"])
    np.testing.assert_array_equal(ali.units, [1] * 4 + [2] * 6)
    model, _ = hmm_em_train(m, {"u": (feats["u"], trans["u"])}, 2)
    assert model.means[0, 0, 0] == pytest.approx(0.0)


def test_align_errors():
    feats, trans = _step_data()
    m = hmm_init_uniform(trans, feats)
    with pytest.raises(AlignmentError):
        viterbi_align(m, feats["u"][:1], [1, 2])
    with pytest.raises(AlignmentError):
        viterbi_align(m, feats["u"], [1, 9])
    with pytest.raises(AlignmentError):
        viterbi_align(m, np.zeros((3, 2)), [1])


def _random_model(rng, U, D):
    return HmmModel(np.arange(1, U + 1), np.ones((U, 1)), rng.normal(size=(U, 1, D)),
                    rng.uniform(0.3, 2.0, size=(U, 1, D)), rng.uniform(0.2, 0.9, size=U))


def test_viterbi_matches_exhaustive_segmentation():
    rng = np.random.default_rng(0)
    for _ in range(300):
        U = int(rng.integers(1, 4))
        T = int(rng.integers(U, 11))
        model = _random_model(rng, U, 2)
        trans = list(rng.permutation(np.arange(1, U + 1)))
        x = rng.normal(size=(T, 2))
        ali = viterbi_align(model, x, trans)
        from zerosub.hmm import emission_matrix
        emit = emission_matrix(model, x, trans)
        p = model.p_loop[[model.index(u) for u in trans]]
        ref = segmentation_oracle(emit, np.log(p), np.log1p(-p))
        assert ali.score == pytest.approx(ref, abs=1e-9)
        assert path_score(emit, np.log(p), np.log1p(-p), ali.positions) == pytest.approx(ref, abs=1e-9)
        assert np.all(np.diff(ali.positions) >= 0) and ali.positions[-1] == U - 1


def test_ties_advance_late():
    model = HmmModel(np.array([1, 2]), np.ones((2, 1)), np.zeros((2, 1, 1)),
                     np.ones((2, 1, 1)), np.full(2, 0.5))
    ali = viterbi_align(model, np.zeros((4, 1)), [1, 2])
    np.testing.assert_array_equal(ali.positions, [0, 0, 0, 1])


def _synthetic_hmm_data(seed=0, utts=6, G=1):
    spec = SynthSpec(num_languages=1, num_units=4, dim=3, speakers_per_language=1,
                     utterances_per_speaker=utts, min_units=8, max_units=12)
    corpus = synthesize(spec, seed)
    data = {u: (corpus.features[u].astype(np.float64), collapse(corpus.labels[u]))
            for u in corpus.features}
    model = hmm_init_uniform({k: t for k, (_, t) in data.items()},
                             {k: f for k, (f, _) in data.items()}, G)
    return corpus, data, model


@pytest.mark.parametrize("G", [1, 2])
def test_em_monotone(G):
    _, data, model = _synthetic_hmm_data(G=G)
    _, hist = hmm_em_train(model, data, 10)
    assert all(b >= a - 1e-6 for a, b in zip(hist, hist[1:]))


def test_em_recovers_unit_means():
    corpus, data, model = _synthetic_hmm_data(seed=3, utts=20)
    trained, _ = hmm_em_train(model, data, 8)
    # single speaker: frames are an affine image of the clean unit means
    for i, u in enumerate(trained.units):
        frames = np.concatenate([corpus.features[k][corpus.labels[k] == u] for k in corpus.features])
        sigma = frames.std(axis=0)
        assert np.all(np.abs(trained.means[i, 0] - frames.mean(axis=0)) < 0.1 * sigma)


def test_phone_and_state_exports_agree(tmp_path):
    _, data, model = _synthetic_hmm_data()
    alis = align_corpus(model, data)
    phone, state = alignment_labels(alis, "phone"), alignment_labels(alis, "state")
    assert phone.keys() == state.keys()
    for k in phone:
        np.testing.assert_array_equal(phone[k], state[k])
        assert collapse(phone[k]) == data[k][1]
    with pytest.raises(ValueError):
        alignment_labels(alis, "word")
    save_hmm(tmp_path / "h.json", model)
    back = load_hmm(tmp_path / "h.json")
    np.testing.assert_array_equal(back.means, model.means)


def test_starved_units_keep_parameters():
    feats, trans = _step_data()
    m = hmm_init_uniform({"u": [1, 2], "v": [3]}, {"u": feats["u"], "v": np.ones((2, 1))})
    trained, _ = hmm_em_train(m, {"u": (feats["u"], [1, 2])}, 1)
    np.testing.assert_array_equal(trained.means[2], m.means[2])

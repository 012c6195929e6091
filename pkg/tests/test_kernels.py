import numpy as np
import pytest

from zerosub import _kernels, abx, dpgmm, hmm
from zerosub._kernels import _pure

from oracles import dtw_oracle, path_score, segmentation_oracle

needs_ext = pytest.mark.skipif(_kernels.ckernels is None, reason="compiled extension not built")


@pytest.fixture(params=["python", "cython"])
def backend(request, monkeypatch):
    if request.param == "cython":
        if _kernels.ckernels is None:
            pytest.skip("compiled extension not built")
        impl = _kernels.ckernels
    else:
        impl = _pure
    for name in ("gibbs_sweep", "dtw_accumulate", "viterbi_chain"):
        monkeypatch.setattr(_kernels, name, getattr(impl, name))
    return impl


def test_backend_selection():
    assert _kernels.BACKEND in ("cython", "python")
    assert (_kernels.BACKEND == "cython") == (_kernels.ckernels is not None)


def test_dtw_oracle_each_backend(backend):
    rng = np.random.default_rng(0)
    for _ in range(40):
        cost = rng.integers(0, 3, size=(int(rng.integers(1, 6)), int(rng.integers(1, 6)))) / 2.0
        total, length = backend.dtw_accumulate(np.ascontiguousarray(cost))
        assert abs(total / length - dtw_oracle(cost)) < 1e-12


def test_viterbi_oracle_each_backend(backend):
    rng = np.random.default_rng(1)
    for _ in range(40):
        L = int(rng.integers(1, 4))
        T = int(rng.integers(L, 9))
        emit = rng.normal(size=(T, L))
        ls, la = np.log(rng.uniform(0.2, 0.8, L)), np.log(rng.uniform(0.2, 0.8, L))
        score, pos = backend.viterbi_chain(emit, ls, la)
        ref = segmentation_oracle(emit, ls, la)
        assert score == pytest.approx(ref, abs=1e-9)
        assert path_score(emit, ls, la, pos) == pytest.approx(ref, abs=1e-9)


@needs_ext
def test_backends_agree_on_dtw_and_viterbi():
    rng = np.random.default_rng(2)
    c = _kernels.ckernels
    for _ in range(30):
        cost = np.ascontiguousarray(rng.random((int(rng.integers(1, 30)), int(rng.integers(1, 30)))))
        a, b = c.dtw_accumulate(cost), _pure.dtw_accumulate(cost)
        assert a[1] == b[1] and a[0] == pytest.approx(b[0], rel=1e-12)
        T, L = int(rng.integers(5, 40)), int(rng.integers(1, 5))
        emit = np.ascontiguousarray(rng.normal(size=(T, L)))
        ls, la = np.log(np.full(L, 0.7)), np.log(np.full(L, 0.3))
        sa, pa = c.viterbi_chain(emit, ls, la)
        sb, pb = _pure.viterbi_chain(emit, ls, la)
        np.testing.assert_array_equal(pa, pb)
        assert sa == pytest.approx(sb, rel=1e-12)


def _fit_labels(monkeypatch, impl, X, cfg):
    monkeypatch.setattr(_kernels, "gibbs_sweep", impl.gibbs_sweep)
    return dpgmm.dpgmm_fit(X, cfg, return_labels=True)


@needs_ext
def test_backends_agree_on_gibbs(monkeypatch):
    rng = np.random.default_rng(3)
    X = np.concatenate([rng.normal(loc=c, size=(60, 3)) for c in (-4.0, 0.0, 4.0)])
    cfg = dpgmm.DpgmmConfig(sweeps=15, seed=5)
    ma, za = _fit_labels(monkeypatch, _kernels.ckernels, X, cfg)
    mb, zb = _fit_labels(monkeypatch, _pure, X, cfg)
    np.testing.assert_array_equal(za, zb)
    np.testing.assert_allclose(ma.means, mb.means, rtol=1e-12)
    assert ma.sweep_sizes == mb.sweep_sizes


def test_pure_backend_end_to_end(backend):
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    assert abx.dtw_distance(a, b) == pytest.approx(dtw_oracle(abx.cosine_cost_matrix(a, b)))
    x = np.concatenate([np.zeros((3, 1)), np.ones((3, 1)) * 5])
    m = hmm.hmm_init_uniform({"u": [1, 2]}, {"u": x})
    np.testing.assert_array_equal(hmm.viterbi_align(m, x, [1, 2]).units, [1, 1, 1, 2, 2, 2])

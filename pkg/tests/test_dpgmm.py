import numpy as np
import pytest
from scipy import stats
from sklearn.metrics import adjusted_rand_score

from zerosub.dpgmm import (
    DpgmmConfig, DpgmmModel, cluster_cdf, decode_model, dpgmm_assign, dpgmm_fit,
    encode_model, load_model, log_weighted_densities, save_model,
)


def three_blobs(seed=0, n=500, sep=5.0):
    rng = np.random.default_rng(seed)
    centres = sep * np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    y = np.repeat(np.arange(3), n)
    return centres[y] + rng.normal(size=(3 * n, 2)), y


def test_single_frame():
    model, z = dpgmm_fit(np.array([[1.0, 2.0]]), DpgmmConfig(sweeps=5), return_labels=True)
    assert model.K == 1 and model.N == 1
    np.testing.assert_array_equal(z, [1])
    assert np.all(model.variances > 0)


def test_zero_sweeps_keeps_init():
    X, _ = three_blobs(n=20)
    model = dpgmm_fit(X, DpgmmConfig(sweeps=0, init_clusters=4))
    assert model.K == 4 and model.N == 60


def test_recovers_three_gaussians():
    X, y = three_blobs()
    model, z = dpgmm_fit(X, DpgmmConfig(sweeps=200, seed=1), return_labels=True)
    assert adjusted_rand_score(y, z) >= 0.95
    assert adjusted_rand_score(y, dpgmm_assign(model, X)) >= 0.95
    assert len(model.sweep_sizes) == 200


def test_deterministic(tmp_path):
    X, _ = three_blobs(n=100)
    cfg = DpgmmConfig(sweeps=30, seed=9)
    a = dpgmm_fit(X, cfg, return_labels=True)
    b = dpgmm_fit(X, cfg, return_labels=True)
    np.testing.assert_array_equal(a[1], b[1])
    assert encode_model(a[0]) == encode_model(b[0])
    c = dpgmm_fit(X, DpgmmConfig(sweeps=30, seed=10))
    assert encode_model(c) != encode_model(a[0])


def test_config_validation():
    X = np.zeros((3, 1))
    for bad in (dict(alpha=0), dict(sweeps=-1), dict(init_clusters=0), dict(kappa0=0),
                dict(b0=(0.0,))):
        with pytest.raises(ValueError):
            dpgmm_fit(X, DpgmmConfig(**bad))
    with pytest.raises(ValueError):
        dpgmm_fit(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        dpgmm_fit(X, DpgmmConfig(m0=(0.0, 1.0)))


def _random_model(rng, K, D):
    counts = rng.integers(1, 50, size=K).astype(np.int64)
    return DpgmmModel(counts, rng.normal(size=(K, D)), rng.uniform(0.2, 3.0, size=(K, D)),
                      1.0, np.zeros(D), 0.01, 1.0, np.ones(D))


def test_assign_matches_scipy_bruteforce():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        K, D = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        model = _random_model(rng, K, D)
        x = rng.normal(scale=2.0, size=(1, D))
        scores = [np.log(model.counts[k] / model.counts.sum())
                  + stats.multivariate_normal.logpdf(x[0], model.means[k], np.diag(model.variances[k]))
                  for k in range(K)]
        np.testing.assert_allclose(log_weighted_densities(model, x)[0], scores, rtol=1e-9, atol=1e-9)
        assert dpgmm_assign(model, x)[0] == int(np.argmax(scores)) + 1


def test_assign_dim_mismatch():
    model = _random_model(np.random.default_rng(0), 2, 3)
    with pytest.raises(ValueError):
        dpgmm_assign(model, np.zeros((1, 2)))


def test_cdf_examples():
    cdf = cluster_cdf([[1, 1, 2], [1, 3]])
    assert cdf == [(1, 0.6), (2, 0.8), (3, 1.0)]
    assert cluster_cdf([[5, 5, -1]]) == [(1, 1.0)]
    with pytest.raises(ValueError):
        cluster_cdf([[-1]])


def test_cdf_ends_at_one():
    rng = np.random.default_rng(0)
    cdf = cluster_cdf([rng.integers(1, 40, size=333) for _ in range(3)])
    assert cdf[-1][1] == 1.0
    assert all(a[1] <= b[1] for a, b in zip(cdf, cdf[1:]))


def test_model_roundtrip(tmp_path):
    X, _ = three_blobs(n=30)
    model = dpgmm_fit(X, DpgmmConfig(sweeps=10, seed=3))
    buf = encode_model(model)
    back = decode_model(buf)
    assert encode_model(back) == buf
    np.testing.assert_array_equal(back.counts, model.counts)
    np.testing.assert_array_equal(back.variances, model.variances)
    assert back.seed == 3
    save_model(tmp_path / "m.zrsm", model)
    np.testing.assert_array_equal(load_model(tmp_path / "m.zrsm").means, model.means)


@pytest.mark.parametrize("cut", [b"XXXX", "short", "trailing"])
def test_model_decode_errors(cut):
    buf = encode_model(dpgmm_fit(np.ones((4, 2)) + np.arange(4)[:, None], DpgmmConfig(sweeps=2)))
    if cut == b"XXXX":
        buf = b"XXXX" + buf[4:]
    elif cut == "short":
        buf = buf[:-3]
    else:
        buf = buf + b"\x00"
    with pytest.raises(ValueError):
        decode_model(buf)

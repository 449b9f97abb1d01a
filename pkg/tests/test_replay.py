import numpy as np
import pytest

from subspacecil.replay import fit_class_stats, sample_pseudo_features


def test_single_sample_convention():
    stats = fit_class_stats(np.array([[1.0, 2.0, 3.0]]), np.array([4]))
    assert np.array_equal(stats[4].mu, [1.0, 2.0, 3.0])
    assert np.array_equal(stats[4].cov, np.zeros((3, 3)))
    assert stats[4].sample_count == 1


def test_antipodal_pair_covariance():
    x = np.array([2.0, -1.0])
    stats = fit_class_stats(np.stack([x, -x]), np.array([0, 0]))
    assert np.allclose(stats[0].mu, 0.0)
    assert np.allclose(stats[0].cov, 2.0 * np.outer(x, x))  # unbiased, n-1 = 1


def test_permutation_invariance():
    rng = np.random.default_rng(0)
    feats = rng.standard_normal((20, 5))
    labels = rng.integers(0, 3, 20)
    base = fit_class_stats(feats, labels)
    perm = rng.permutation(20)
    shuffled = fit_class_stats(feats[perm], labels[perm])
    for cid in base:
        assert np.allclose(base[cid].mu, shuffled[cid].mu, atol=1e-12)
        assert np.allclose(base[cid].cov, shuffled[cid].cov, atol=1e-12)


def test_fit_validation():
    with pytest.raises(ValueError):
        fit_class_stats(np.zeros((0, 3)), np.zeros(0, dtype=int))


def test_diagonal_only_mode():
    rng = np.random.default_rng(1)
    feats = rng.standard_normal((50, 4))
    labels = np.zeros(50, dtype=int)
    stats = fit_class_stats(feats, labels, diagonal_only=True)
    cov = stats[0].cov
    assert np.array_equal(cov, np.diag(np.diag(cov)))


def make_stats(rng, class_ids, d=6):
    feats, labels = [], []
    for cid in class_ids:
        feats.append(rng.standard_normal((5, d)) + cid)
        labels.append(np.full(5, cid))
    return fit_class_stats(np.concatenate(feats), np.concatenate(labels))


def test_even_split():
    stats = make_stats(np.random.default_rng(2), range(10))
    feats, labels = sample_pseudo_features(stats, list(range(10)), 2000, seed=0)
    assert feats.shape == (2000, 6)
    ids, counts = np.unique(labels, return_counts=True)
    assert counts.tolist() == [200] * 10


def test_remainder_to_lowest_ids():
    stats = make_stats(np.random.default_rng(3), [5, 1, 9])
    _, labels = sample_pseudo_features(stats, [9, 5, 1], 7, seed=0)
    ids, counts = np.unique(labels, return_counts=True)
    assert dict(zip(ids.tolist(), counts.tolist())) == {1: 3, 5: 2, 9: 2}


def test_order_independent_determinism():
    stats = make_stats(np.random.default_rng(4), [0, 1, 2])
    a = sample_pseudo_features(stats, [0, 1, 2], 30, seed=7)
    b = sample_pseudo_features(stats, [2, 0, 1], 30, seed=7)
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])


def test_unknown_class_rejected():
    stats = make_stats(np.random.default_rng(5), [0])
    with pytest.raises(ValueError):
        sample_pseudo_features(stats, [0, 3], 10, seed=0)


def test_roundtrip_moments():
    # smaller sibling of the acceptance-scale round trip
    rng = np.random.default_rng(6)
    d = 5
    mu = rng.standard_normal(d)
    a = rng.standard_normal((d, d))
    cov = a @ a.T / d
    feats = mu + rng.standard_normal((20_000, d)) @ np.linalg.cholesky(cov).T
    stats = fit_class_stats(feats, np.zeros(20_000, dtype=int))
    resampled, _ = sample_pseudo_features(stats, [0], 20_000, seed=8)
    refit = fit_class_stats(resampled, np.zeros(20_000, dtype=int))
    assert np.max(np.abs(refit[0].mu - stats[0].mu)) < 0.05
    assert np.max(np.abs(refit[0].cov - stats[0].cov)) < 0.08


def test_memory_footprint_independent_of_n():
    rng = np.random.default_rng(7)
    small = fit_class_stats(rng.standard_normal((10, 4)), np.zeros(10, dtype=int))
    big = fit_class_stats(rng.standard_normal((10_000, 4)), np.zeros(10_000, dtype=int))
    assert small[0].mu.nbytes + small[0].cov.nbytes == big[0].mu.nbytes + big[0].cov.nbytes

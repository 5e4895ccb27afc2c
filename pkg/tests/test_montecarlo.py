"""Tests for the chunked Monte-Carlo estimator."""

import numpy as np

from continuous_dropout.masks import MaskDistribution, RngStream, sample_mask
from continuous_dropout.montecarlo import chunk_sizes, estimate_moments


def _uniform_pairs(stream, size):
    return sample_mask(MaskDistribution.uniform(), (size, 2), stream)


def test_chunk_sizes():
    assert chunk_sizes(10, 4) == [4, 4, 2]
    assert chunk_sizes(8, 4) == [4, 4]
    assert sum(chunk_sizes(1_000_001)) == 1_000_001


def test_independent_of_worker_count():
    one = estimate_moments(_uniform_pairs, 50_000, RngStream(5), shift=np.full(2, 0.5), workers=1, chunk_size=4096)
    many = estimate_moments(_uniform_pairs, 50_000, RngStream(5), shift=np.full(2, 0.5), workers=4, chunk_size=4096)
    assert np.array_equal(one.mean, many.mean)
    assert np.array_equal(one.covariance, many.covariance)


def test_uniform_moments_within_four_standard_errors():
    est = estimate_moments(_uniform_pairs, 200_000, RngStream(8), shift=np.full(2, 0.5), workers=2)
    assert est.n_samples == 200_000
    assert np.all(np.abs(est.mean - 0.5) < 4 * est.mean_se)
    exact = np.diag([1.0 / 12.0, 1.0 / 12.0])
    assert np.all(np.abs(est.covariance - exact) < 4 * est.covariance_se)
    assert np.allclose(est.covariance, est.covariance.T)


def test_shift_does_not_change_estimate():
    a = estimate_moments(_uniform_pairs, 20_000, RngStream(1), shift=np.zeros(2), workers=1)
    b = estimate_moments(_uniform_pairs, 20_000, RngStream(1), shift=np.full(2, 0.5), workers=1)
    assert np.allclose(a.mean, b.mean, atol=1e-12)
    assert np.allclose(a.covariance, b.covariance, atol=1e-12)

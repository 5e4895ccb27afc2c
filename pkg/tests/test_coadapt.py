"""Tests for pairwise covariance histograms."""

import numpy as np
import pytest

from continuous_dropout.activations import ActivationKind
from continuous_dropout.coadapt import (
    CovHistogram,
    covariance_histogram,
    default_bins,
    histogram,
    pair_covariances,
    shared_bins,
    zero_bin_fraction,
)
from continuous_dropout.errors import NoStochasticMaskError, SampleSizeError, ValidationError
from continuous_dropout.masks import MaskDistribution, RngStream
from continuous_dropout.network import DenseLayer, NetSpec, Network, build_network

UNIFORM = MaskDistribution.uniform()


def _linear(weights, dropout=UNIFORM):
    w = np.asarray(weights, dtype=float)
    return Network([DenseLayer(w, np.zeros(w.shape[0]), ActivationKind.IDENTITY, dropout=dropout)])


class TestPairCovariances:
    """Monte-Carlo covariances of unit pairs."""

    def test_matches_closed_form(self):
        covs = pair_covariances(_linear([[1.0, 1.0], [1.0, 1.0]]), 0, [[1.0, 1.0]], 400_000, RngStream(1))
        assert covs.values.shape == (1, 1)
        assert abs(covs.values[0, 0] - 2.0 / 12.0) < 4 * covs.standard_errors[0, 0]

    def test_pairs_and_counts(self):
        net = _linear(np.random.default_rng(0).normal(size=(4, 3)))
        covs = pair_covariances(net, 0, np.ones((5, 3)), 200, RngStream(2))
        assert covs.values.shape == (5, 6)
        assert covs.pairs.tolist() == [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]
        assert covs.n_inputs == 5
        assert covs.n_repeats == 200

    def test_no_dropout_upstream(self):
        with pytest.raises(NoStochasticMaskError):
            pair_covariances(_linear(np.ones((2, 2)), dropout=None), 0, [[1.0, 1.0]], 200, RngStream(0))

    def test_measure_dropout_adds_noise_to_hidden_layers(self):
        net = build_network(NetSpec((3, 4, 4, 2)), RngStream(3), init_std=0.5)
        with pytest.raises(NoStochasticMaskError):
            pair_covariances(net, 1, np.ones((2, 3)), 200, RngStream(4))
        covs = pair_covariances(net, 1, np.ones((2, 3)), 200, RngStream(4), measure_dropout=UNIFORM)
        assert covs.values.shape == (2, 6)
        assert net.layers[1].dropout is None

    def test_too_few_repeats(self):
        with pytest.raises(SampleSizeError):
            pair_covariances(_linear(np.ones((2, 2))), 0, [[1.0, 1.0]], 99, RngStream(0))

    def test_layer_index_checked(self):
        with pytest.raises(ValidationError):
            pair_covariances(_linear(np.ones((2, 2))), 1, [[1.0, 1.0]], 200, RngStream(0))


class TestHistogram:
    """Binning, mass conservation and the zero bin."""

    def test_mass_conservation(self):
        net = _linear(np.random.default_rng(5).normal(size=(5, 3)))
        hist = covariance_histogram(net, 0, np.random.default_rng(6).normal(size=(4, 3)), 300, RngStream(7))
        assert hist.total == 10 * 4
        assert len(hist.log_counts) == len(hist.bin_edges) - 1
        assert np.all(np.diff(hist.bin_edges) > 0)

    def test_zero_weights_single_bin(self):
        hist = covariance_histogram(_linear(np.zeros((3, 2))), 0, [[1.0, 1.0]], 200, RngStream(8))
        assert np.count_nonzero(hist.counts) == 1
        assert zero_bin_fraction(hist) == 1.0

    def test_log_counts_absent_for_empty_bins(self):
        hist = covariance_histogram(_linear(np.zeros((3, 2))), 0, [[1.0, 1.0]], 200, RngStream(8))
        populated = hist.counts > 0
        assert np.allclose(hist.log_counts[populated], np.log10(hist.counts[populated]))
        assert np.all(np.isnan(hist.log_counts[~populated]))

    def test_default_bins(self):
        edges = default_bins(np.linspace(-1.0, 1.0, 1001), n_bins=41)
        assert edges.size == 41 + 3
        assert edges[0] == -np.inf and edges[-1] == np.inf
        unsigned = default_bins(np.linspace(-1.0, 1.0, 1001), n_bins=41, signed=False)
        assert unsigned[0] == 0.0 and unsigned.size == 43

    def test_shared_bins_make_fractions_comparable(self):
        net_a = _linear(np.random.default_rng(9).normal(size=(4, 3)))
        net_b = _linear(0.1 * np.random.default_rng(9).normal(size=(4, 3)))
        inputs = np.ones((3, 3))
        a = pair_covariances(net_a, 0, inputs, 500, RngStream(10))
        b = pair_covariances(net_b, 0, inputs, 500, RngStream(10))
        edges = shared_bins([a.values, b.values])
        ha, hb = histogram(a, edges), histogram(b, edges)
        assert np.array_equal(ha.bin_edges, hb.bin_edges)
        assert zero_bin_fraction(hb) >= zero_bin_fraction(ha)

    def test_unsigned_histogram(self):
        net = _linear(np.random.default_rng(11).normal(size=(4, 3)))
        covs = pair_covariances(net, 0, np.ones((2, 3)), 200, RngStream(12))
        hist = histogram(covs, signed=False)
        assert hist.bin_edges[0] == 0.0
        assert hist.total == covs.values.size

    def test_bad_edges(self):
        covs = pair_covariances(_linear(np.ones((2, 2))), 0, [[1.0, 1.0]], 200, RngStream(0))
        with pytest.raises(ValidationError):
            histogram(covs, np.array([0.0, 0.0, 1.0]))

    def test_frame_and_round_trip(self, tmp_path):
        hist = covariance_histogram(_linear(np.ones((3, 2))), 0, [[1.0, 1.0]], 200, RngStream(13))
        frame = hist.to_frame()
        assert list(frame.columns) == ["bin_left", "bin_right", "log10_count"]
        assert len(frame) == len(hist.counts)
        path = tmp_path / "hist.json"
        hist.save(str(path))
        loaded = CovHistogram.load(str(path))
        assert np.array_equal(loaded.counts, hist.counts)
        assert np.array_equal(loaded.bin_edges, hist.bin_edges)

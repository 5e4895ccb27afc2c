"""Tests for closed-form layer moments and the sigmoid expectation."""

import math

import numpy as np
import pytest

from continuous_dropout.activations import ActivationKind, SigmoidParams, sigmoid
from continuous_dropout.errors import DimensionError, SampleSizeError, UnsupportedActivationError, ValidationError
from continuous_dropout.masks import MaskDistribution, MomentMode, RngStream
from continuous_dropout.network import DenseLayer, Network
from continuous_dropout.statics import (
    MomentReport,
    MomentSource,
    approximation_error_grid,
    linear_output_moments,
    mc_forward_expectations,
    mc_output_moments,
    normality_diagnostic,
    propagate_expectations,
    sigmoid_expectation,
    sigmoid_expectation_quadrature,
)

BERNOULLI = MaskDistribution.bernoulli(0.5)
UNIFORM = MaskDistribution.uniform()
GAUSSIAN = MaskDistribution.gaussian(0.5, 0.2)
FREE_GAUSSIAN = MaskDistribution.gaussian(0.5, 0.2, clipped=False)


class TestLinearOutputMoments:
    """Closed-form moments of a masked linear layer."""

    def test_uniform_example(self):
        report = linear_output_moments([[1.0, 2.0]], [1.0, 1.0], UNIFORM)
        assert report.source is MomentSource.CLOSED_FORM
        assert report.expected[0] == pytest.approx(1.5)
        assert report.variance[0] == pytest.approx(5.0 / 12.0)

    def test_orthogonal_rows_have_zero_covariance(self):
        report = linear_output_moments([[1.0, 1.0], [1.0, -1.0]], [1.0, 1.0], UNIFORM)
        assert report.covariance[0, 1] == pytest.approx(0.0, abs=1e-15)

    def test_zero_weights(self):
        report = linear_output_moments(np.zeros((3, 4)), [1.0, -2.0, 3.0, 0.5], GAUSSIAN)
        assert not report.expected.any()
        assert not report.covariance.any()

    def test_variance_is_covariance_diagonal(self):
        gen = np.random.default_rng(0)
        report = linear_output_moments(gen.normal(size=(5, 6)), gen.normal(size=6), UNIFORM)
        assert np.array_equal(report.variance, np.diag(report.covariance))
        assert np.allclose(report.covariance, report.covariance.T)
        assert np.all(report.variance >= 0)

    def test_ratio_laws_and_equal_means(self):
        gen = np.random.default_rng(1)
        for _ in range(20):
            W, I = gen.normal(size=(4, 5)), gen.normal(size=5)
            bern = linear_output_moments(W, I, BERNOULLI)
            unif = linear_output_moments(W, I, UNIFORM)
            gauss = linear_output_moments(W, I, MaskDistribution.gaussian(0.5, 1.0 / 12.0, clipped=False))
            assert np.allclose(bern.covariance, 3.0 * unif.covariance, rtol=1e-12, atol=0.0)
            assert np.allclose(gauss.covariance, unif.covariance, rtol=1e-12, atol=0.0)
            assert np.array_equal(bern.expected, unif.expected)

    def test_clipped_gaussian_modes(self):
        nominal = linear_output_moments([[1.0]], [1.0], GAUSSIAN, MomentMode.NOMINAL)
        effective = linear_output_moments([[1.0]], [1.0], GAUSSIAN, MomentMode.EFFECTIVE)
        assert nominal.variance[0] == pytest.approx(0.2)
        assert effective.variance[0] < 0.2
        assert nominal.expected[0] == effective.expected[0] == 0.5

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            linear_output_moments([[1.0, 2.0]], [1.0, 2.0, 3.0], UNIFORM)

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError):
            linear_output_moments([[math.nan]], [1.0], UNIFORM)


class TestMonteCarloOracle:
    """MC estimates agree with the closed forms."""

    def test_uniform_variance_within_four_se(self):
        mc = mc_output_moments([[1.0, 2.0]], [1.0, 1.0], UNIFORM, 200_000, RngStream(1), workers=2)
        assert mc.source is MomentSource.MONTE_CARLO
        assert abs(mc.variance[0] - 5.0 / 12.0) < 4 * mc.standard_error[0, 0]
        assert abs(mc.expected[0] - 1.5) < 4 * mc.expected_standard_error[0]

    def test_bernoulli_single_weight(self):
        mc = mc_output_moments([[1.0]], [1.0], BERNOULLI, 200_000, RngStream(2))
        assert abs(mc.variance[0] - 0.25) < 4 * mc.standard_error[0, 0]

    @pytest.mark.parametrize("dist", [BERNOULLI, UNIFORM, FREE_GAUSSIAN, GAUSSIAN])
    def test_random_layer(self, dist):
        gen = np.random.default_rng(3)
        W, I = gen.normal(size=(3, 4)), gen.normal(size=4)
        closed = linear_output_moments(W, I, dist)
        mc = mc_output_moments(W, I, dist, 200_000, RngStream(4), workers=2)
        assert np.all(np.abs(mc.expected - closed.expected) < 4 * mc.expected_standard_error)
        assert np.all(np.abs(mc.covariance - closed.covariance) < 4 * mc.standard_error)

    def test_repeatable(self):
        a = mc_output_moments([[1.0, -1.0]], [0.3, 0.7], GAUSSIAN, 20_000, RngStream(5), workers=1)
        b = mc_output_moments([[1.0, -1.0]], [0.3, 0.7], GAUSSIAN, 20_000, RngStream(5), workers=3)
        assert np.array_equal(a.covariance, b.covariance)
        assert np.array_equal(a.expected, b.expected)

    def test_too_few_samples(self):
        with pytest.raises(SampleSizeError):
            mc_output_moments([[1.0]], [1.0], UNIFORM, 9_999, RngStream(0))

    def test_report_round_trip(self, tmp_path):
        mc = mc_output_moments([[1.0, 2.0]], [1.0, 1.0], UNIFORM, 10_000, RngStream(6))
        path = tmp_path / "moments.json"
        mc.save(str(path))
        loaded = MomentReport.load(str(path))
        assert loaded.source is MomentSource.MONTE_CARLO
        assert np.array_equal(loaded.covariance, mc.covariance)
        assert loaded.n_samples == 10_000

    def test_normality_diagnostic_is_small_for_many_inputs(self):
        gen = np.random.default_rng(7)
        W = gen.normal(size=(2, 200))
        ks = normality_diagnostic(W, np.ones(200), UNIFORM, 20_000, RngStream(8))
        assert len(ks) == 2
        assert all(0.0 <= d < 0.05 for d in ks)


class TestSigmoidExpectation:
    """Approximation and quadrature oracle."""

    def test_examples(self):
        assert sigmoid_expectation(0.0, 4.0) == pytest.approx(0.5)
        assert sigmoid_expectation(2.0, 0.0) == pytest.approx(0.880797, abs=1e-6)
        assert sigmoid_expectation(2.0, 8.0 / math.pi) == pytest.approx(1.0 / (1.0 + math.exp(-math.sqrt(2.0))))

    def test_vectorised(self):
        out = sigmoid_expectation(np.array([0.0, 2.0]), np.array([4.0, 0.0]))
        assert out.shape == (2,)

    def test_negative_variance(self):
        with pytest.raises(ValidationError):
            sigmoid_expectation(0.0, -1.0)
        with pytest.raises(ValidationError):
            sigmoid_expectation_quadrature(0.0, -1.0)

    def test_quadrature_examples(self):
        for var in (0.5, 2.0, 8.0):
            assert sigmoid_expectation_quadrature(0.0, var) == pytest.approx(0.5, abs=1e-8)
        assert sigmoid_expectation_quadrature(-3.0, 0.0) == pytest.approx(0.047426, abs=1e-6)

    def test_quadrature_matches_sampling(self):
        gen = np.random.default_rng(9)
        draws = sigmoid(1.0 + 1.5 * gen.standard_normal(400_000))
        se = draws.std() / math.sqrt(draws.size)
        assert abs(sigmoid_expectation_quadrature(1.0, 2.25) - draws.mean()) < 4 * se

    def test_grid_error_below_bound(self):
        grid = approximation_error_grid()
        assert len(grid) == 25 * 6
        assert list(grid.columns) == ["mu_s", "var_s", "approximation", "quadrature", "abs_error"]
        assert grid["abs_error"].max() < 0.02
        assert grid.loc[grid["var_s"] == 0.0, "abs_error"].max() < 1e-12

    def test_params_enter_sigmoid(self):
        params = SigmoidParams(c=2.0, lam=3.0)
        assert sigmoid_expectation(0.5, 0.0, params) == pytest.approx(1.0 / (1.0 + 2.0 * math.exp(-1.5)))


def _sigmoid_net(weights, dropout=None):
    layers = [
        DenseLayer(np.asarray(w, dtype=float), np.zeros(np.shape(w)[0]), ActivationKind.SIGMOID, dropout=dropout)
        for w in weights
    ]
    return Network(layers)


class TestPropagateExpectations:
    """Layer-wise expectation recursion for sigmoid networks."""

    def test_single_layer_example(self):
        net = _sigmoid_net([[[1.0, 2.0]]])
        (layer,) = propagate_expectations(net, [1.0, 1.0], GAUSSIAN)
        assert layer.expected_s[0] == pytest.approx(1.5)
        assert layer.variance_s[0] == pytest.approx(1.0)
        expected = 1.0 / (1.0 + math.exp(-1.5 / math.sqrt(1.0 + math.pi * 1.0 / 8.0)))
        assert layer.expected_o[0] == pytest.approx(expected)

    def test_zero_weights_give_half(self):
        net = _sigmoid_net([np.zeros((3, 2)), np.zeros((2, 3))])
        for layer in propagate_expectations(net, [0.4, -0.9], GAUSSIAN):
            assert np.allclose(layer.expected_o, 0.5)

    def test_bernoulli_and_gaussian_share_first_layer_mean(self):
        net = _sigmoid_net([[[1.0, -2.0], [0.5, 0.5]], [[1.0, 1.0]]])
        bern = propagate_expectations(net, [0.3, 0.8], BERNOULLI)
        gauss = propagate_expectations(net, [0.3, 0.8], GAUSSIAN)
        assert np.array_equal(bern[0].expected_s, gauss[0].expected_s)
        assert np.array_equal(bern[0].expected_o, sigmoid(bern[0].expected_s))

    def test_layer_dropout_used_when_no_law_given(self):
        net = _sigmoid_net([[[1.0, 2.0]]], dropout=UNIFORM)
        (layer,) = propagate_expectations(net, [1.0, 1.0])
        assert layer.variance_s[0] == pytest.approx(5.0 / 12.0)

    def test_rejects_relu(self):
        net = Network([DenseLayer(np.ones((1, 2)), np.zeros(1), ActivationKind.RELU)])
        with pytest.raises(UnsupportedActivationError):
            propagate_expectations(net, [1.0, 1.0], GAUSSIAN)

    def test_input_dimension(self):
        with pytest.raises(DimensionError):
            propagate_expectations(_sigmoid_net([[[1.0, 2.0]]]), [1.0], GAUSSIAN)

    def test_close_to_monte_carlo(self):
        net = _sigmoid_net([[[1.0, 2.0], [-1.0, 0.5]], [[0.7, -1.2]]])
        closed = propagate_expectations(net, [1.0, 1.0], FREE_GAUSSIAN)
        mc = mc_forward_expectations(net, [1.0, 1.0], 100_000, RngStream(10), FREE_GAUSSIAN, workers=2)
        for layer, (mean, se) in zip(closed, mc):
            assert np.all(np.abs(layer.expected_o - mean) < 0.02 + 4 * se)

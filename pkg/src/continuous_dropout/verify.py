"""Closed-form versus oracle checks bundled for the ``verify`` command.

Every suite draws its random instances from its own substream of the run
seed, so the table printed for a given seed never changes.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import rankdata

from . import config
from .activations import ActivationKind
from .dynamics import (
    exhaustive_bernoulli_error,
    exhaustive_bernoulli_gradient,
    expected_dropout_error_linear,
    expected_gradient_linear,
    mc_dropout_error_linear,
    mc_expected_gradient,
)
from .masks import MaskDistribution, MomentMode, RngStream, format_spec, mask_moments, sample_mask
from .montecarlo import estimate_moments
from .network import DenseLayer, LossKind, Network, backward, forward_masked, numeric_gradients
from .statics import approximation_error_grid, linear_output_moments, mc_output_moments
from .stattests import paired_t_test, wilcoxon_signed_rank

logger = logging.getLogger(__name__)

SIGMOID_TOLERANCE = 0.02
BACKPROP_TOLERANCE = 1e-5
EXACT_RTOL = 1e-12
REFERENCE_P_TOLERANCE = 1e-6


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class VerifyScale:
    """Sizes of the randomised suites."""

    n_instances: int = 100
    n_samples: int = config.DEFAULT_MC_SAMPLES
    n_networks: int = 20
    max_inputs: int = 8
    max_width: int = 16


def oracle_laws() -> list[MaskDistribution]:
    """Laws whose closed forms hold exactly (the Gaussian is left unclipped)."""
    return [
        MaskDistribution.bernoulli(0.5),
        MaskDistribution.uniform(),
        MaskDistribution.gaussian(0.5, 0.2, clipped=False),
    ]


def _within(estimate, exact, se, n_sigma: float) -> tuple[bool, float]:
    """Largest deviation in standard errors; a zero SE demands equality."""
    estimate, exact, se = (np.asarray(v, dtype=float) for v in (estimate, exact, se))
    gap = np.abs(estimate - exact)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, gap / se, np.where(gap <= 1e-12 * (1.0 + np.abs(exact)), 0.0, np.inf))
    worst = float(np.max(z)) if z.size else 0.0
    return worst <= n_sigma, worst


def _random_layer(gen: np.random.Generator, max_inputs: int) -> tuple[np.ndarray, np.ndarray]:
    n = int(gen.integers(1, max_inputs + 1))
    k = int(gen.integers(1, max_inputs + 1))
    return gen.normal(size=(k, n)), gen.uniform(-1.0, 1.0, size=n)


def _random_unit(gen: np.random.Generator, max_inputs: int) -> tuple[np.ndarray, np.ndarray, float]:
    n = int(gen.integers(1, max_inputs + 1))
    return gen.normal(size=n), gen.uniform(-1.0, 1.0, size=n), float(gen.normal())


def check_mask_moments(rng: RngStream, scale: VerifyScale, workers: int | None = None) -> list[CheckResult]:
    """Sampled mask mean/variance against the exact effective moments."""
    laws = oracle_laws() + [MaskDistribution.gaussian(0.5, 0.2), MaskDistribution.gaussian(0.3, 1.0)]
    out = []
    for index, dist in enumerate(laws):
        est = estimate_moments(
            lambda stream, size, d=dist: sample_mask(d, (size, 1), stream),
            scale.n_samples,
            rng.substream(index),
            shift=np.array([mask_moments(dist).mean]),
            workers=workers,
        )
        mean, var = mask_moments(dist)
        ok_mean, z_mean = _within(est.mean[0], mean, est.mean_se[0], config.N_SIGMA)
        ok_var, z_var = _within(est.covariance[0, 0], var, est.covariance_se[0, 0], config.N_SIGMA)
        out.append(
            CheckResult(
                f"mask moments {format_spec(dist)}",
                ok_mean and ok_var,
                f"mean off by {z_mean:.2f} SE, variance off by {z_var:.2f} SE",
            )
        )
    return out


def check_layer_moments(rng: RngStream, scale: VerifyScale, workers: int | None = None) -> list[CheckResult]:
    """Closed-form E[S], Var(S) and Cov(S) against Monte-Carlo on random layers."""
    out = []
    for law_index, dist in enumerate(oracle_laws()):
        gen = rng.substream(2 * law_index).generator()
        draws = rng.substream(2 * law_index + 1)
        worst = 0.0
        for instance in range(scale.n_instances):
            W, I = _random_layer(gen, scale.max_inputs)
            closed = linear_output_moments(W, I, dist, MomentMode.NOMINAL)
            mc = mc_output_moments(W, I, dist, scale.n_samples, draws.substream(instance), workers)
            worst = max(
                worst,
                _within(mc.expected, closed.expected, mc.expected_standard_error, config.N_SIGMA)[1],
                _within(mc.covariance, closed.covariance, mc.standard_error, config.N_SIGMA)[1],
            )
        out.append(
            CheckResult(
                f"layer moments {format_spec(dist)}",
                worst <= config.N_SIGMA,
                f"{scale.n_instances} layers, worst deviation {worst:.2f} SE",
            )
        )
    return out


def check_ratio_laws(rng: RngStream, scale: VerifyScale) -> list[CheckResult]:
    """Bernoulli(0.5) variances are three times the Uniform ones; N(0.5, 1/12) matches Uniform."""
    gen = rng.generator()
    ratio_ok = equal_ok = True
    for _ in range(scale.n_instances):
        W, I = _random_layer(gen, scale.max_inputs)
        bern = linear_output_moments(W, I, MaskDistribution.bernoulli(0.5))
        unif = linear_output_moments(W, I, MaskDistribution.uniform())
        gauss = linear_output_moments(W, I, MaskDistribution.gaussian(0.5, 1.0 / 12.0, clipped=False))
        ratio_ok &= np.allclose(bern.covariance, 3.0 * unif.covariance, rtol=EXACT_RTOL, atol=0.0)
        ratio_ok &= np.allclose(bern.expected, unif.expected, rtol=EXACT_RTOL, atol=0.0)
        equal_ok &= np.allclose(gauss.covariance, unif.covariance, rtol=EXACT_RTOL, atol=0.0)
        equal_ok &= np.allclose(gauss.expected, unif.expected, rtol=EXACT_RTOL, atol=0.0)
    return [
        CheckResult("Bernoulli covariance = 3 x Uniform covariance", bool(ratio_ok), f"{scale.n_instances} layers"),
        CheckResult("Gaussian(0.5, 1/12) moments = Uniform moments", bool(equal_ok), f"{scale.n_instances} layers"),
    ]


def check_sigmoid_approximation() -> list[CheckResult]:
    grid = approximation_error_grid()
    worst = float(grid["abs_error"].max())
    return [
        CheckResult(
            "sigmoid expectation approximation",
            worst < SIGMOID_TOLERANCE,
            f"max |approximation - quadrature| = {worst:.4f} over {len(grid)} grid points",
        )
    ]


def check_linear_decomposition(rng: RngStream, scale: VerifyScale, workers: int | None = None) -> list[CheckResult]:
    """Expected quadratic dropout error of a linear unit: closed form, enumeration and Monte-Carlo."""
    gen = rng.substream(0).generator()
    draws = rng.substream(1)
    gaussian = MaskDistribution.gaussian(0.5, 0.2, clipped=False)
    bernoulli = MaskDistribution.bernoulli(0.5)
    worst_gauss = worst_bern = 0.0
    exact_ok = True
    for instance in range(scale.n_instances):
        w, I, t = _random_unit(gen, scale.max_inputs)
        predicted = expected_dropout_error_linear(w, I, t, gaussian).predicted_e_d
        mc = mc_dropout_error_linear(w, I, t, gaussian, scale.n_samples, draws.substream(2 * instance), workers)
        worst_gauss = max(worst_gauss, _within(mc.mean, predicted, mc.standard_error, config.N_SIGMA)[1])

        closed = expected_dropout_error_linear(w, I, t, bernoulli).predicted_e_d
        enumerated = exhaustive_bernoulli_error(w, I, t, bernoulli.p)
        exact_ok &= math.isclose(closed, enumerated, rel_tol=EXACT_RTOL, abs_tol=1e-15)
        mc = mc_dropout_error_linear(w, I, t, bernoulli, scale.n_samples, draws.substream(2 * instance + 1), workers)
        worst_bern = max(worst_bern, _within(mc.mean, closed, mc.standard_error, config.N_SIGMA)[1])
    return [
        CheckResult(
            "linear error decomposition (Gaussian)",
            worst_gauss <= config.N_SIGMA,
            f"worst deviation {worst_gauss:.2f} SE",
        ),
        CheckResult(
            "linear error decomposition (Bernoulli)",
            worst_bern <= config.N_SIGMA,
            f"worst deviation {worst_bern:.2f} SE",
        ),
        CheckResult("Bernoulli error by enumeration", bool(exact_ok), f"{scale.n_instances} units, rtol {EXACT_RTOL}"),
    ]


def check_expected_gradients(rng: RngStream, scale: VerifyScale, workers: int | None = None) -> list[CheckResult]:
    gen = rng.substream(0).generator()
    draws = rng.substream(1)
    worst = 0.0
    exact_ok = True
    for instance in range(scale.n_instances):
        w, I, t = _random_unit(gen, scale.max_inputs)
        for law_index, dist in enumerate(oracle_laws()):
            closed = expected_gradient_linear(w, I, t, dist)
            stream = draws.substream(len(oracle_laws()) * instance + law_index)
            mc = mc_expected_gradient(w, I, t, dist, LossKind.QUADRATIC, scale.n_samples, stream, workers=workers)
            worst = max(worst, _within(mc.mean, closed, mc.standard_error, config.N_SIGMA)[1])
        closed = expected_gradient_linear(w, I, t, MaskDistribution.bernoulli(0.5))
        exact_ok &= np.allclose(closed, exhaustive_bernoulli_gradient(w, I, t, 0.5), rtol=EXACT_RTOL, atol=1e-15)
    return [
        CheckResult("expected gradient (linear unit)", worst <= config.N_SIGMA, f"worst deviation {worst:.2f} SE"),
        CheckResult("Bernoulli gradient by enumeration", bool(exact_ok), f"{scale.n_instances} units"),
    ]


# (hidden activation, output activation, loss)
_BACKPROP_CASES = [
    (ActivationKind.SIGMOID, ActivationKind.SIGMOID, LossKind.RELATIVE_ENTROPY),
    (ActivationKind.RELU, ActivationKind.SOFTMAX, LossKind.CROSS_ENTROPY),
    (ActivationKind.IDENTITY, ActivationKind.IDENTITY, LossKind.QUADRATIC),
    (ActivationKind.SIGMOID, ActivationKind.SOFTMAX, LossKind.QUADRATIC),
    (ActivationKind.RELU, ActivationKind.SIGMOID, LossKind.QUADRATIC),
    (ActivationKind.IDENTITY, ActivationKind.SOFTMAX, LossKind.RELATIVE_ENTROPY),
]


def random_network(
    gen: np.random.Generator,
    hidden: ActivationKind,
    output: ActivationKind,
    max_layers: int = 3,
    max_width: int = 16,
) -> Network:
    n_layers = int(gen.integers(1, max_layers + 1))
    sizes = [int(gen.integers(2, max_width + 1)) for _ in range(n_layers + 1)]
    dropout = MaskDistribution.gaussian(0.5, 0.2)
    layers = []
    for index, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        final = index == n_layers - 1
        layers.append(
            DenseLayer(
                weights=gen.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_out, n_in)),
                bias=gen.normal(0.0, 0.1, size=n_out),
                activation=output if final else hidden,
                dropout=dropout,
            )
        )
    return Network(layers)


def relative_gradient_error(analytic, numeric) -> float:
    """``|a - n| / max(|a| + |n|, tiny)`` over all parameters at once."""
    a = np.concatenate([np.ravel(g) for g in analytic])
    n = np.concatenate([np.ravel(g) for g in numeric])
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-300))


def check_backprop(rng: RngStream, scale: VerifyScale) -> list[CheckResult]:
    """Analytic gradients of masked networks against central finite differences."""
    gen = rng.generator()
    worst = 0.0
    for index in range(scale.n_networks):
        hidden, output, loss = _BACKPROP_CASES[index % len(_BACKPROP_CASES)]
        net = random_network(gen, hidden, output, max_width=scale.max_width)
        batch = gen.normal(size=(3, net.input_dim))
        masks = [sample_mask(layer.dropout, (3, layer.in_dim), rng.substream(index)) for layer in net.layers]
        if output is ActivationKind.SOFTMAX and loss is LossKind.CROSS_ENTROPY:
            targets = gen.integers(0, net.output_dim, size=3)
        else:
            targets = gen.uniform(0.0, 1.0, size=(3, net.output_dim))
        analytic = backward(net, forward_masked(net, batch, masks), targets, loss)
        numeric = numeric_gradients(net, batch, masks, targets, loss)
        worst = max(
            worst,
            relative_gradient_error(analytic.weights + analytic.biases, numeric.weights + numeric.biases),
        )
    return [
        CheckResult(
            "backprop vs finite differences",
            worst < BACKPROP_TOLERANCE,
            f"{scale.n_networks} networks, worst relative error {worst:.2e}",
        )
    ]


def t_cdf_reference(t: float, df: int) -> float:
    """Student-t CDF for integer ``df`` from the finite trigonometric series."""
    if df < 1:
        raise ValueError(f"df must be a positive integer, got {df}")
    theta = math.atan(t / math.sqrt(df))
    s, c2 = math.sin(theta), math.cos(theta) ** 2
    series, term = 0.0, 1.0
    if df % 2:
        for j in range((df - 1) // 2):
            series += term
            term *= c2 * (2 * j + 2) / (2 * j + 3)
        inside = 2.0 / math.pi * (theta + s * math.cos(theta) * series)
    else:
        for j in range(df // 2):
            series += term
            term *= c2 * (2 * j + 1) / (2 * j + 2)
        inside = s * series
    return 0.5 + 0.5 * inside


def wilcoxon_reference(diffs) -> float:
    """Two-sided p-value by enumerating all ``2^n`` sign patterns."""
    d = np.asarray([x for x in diffs if x != 0.0], dtype=float)
    ranks = rankdata(np.abs(d))
    observed = float(ranks[d > 0].sum())
    tail = min(observed, float(ranks.sum()) - observed)
    hits = sum(
        1
        for signs in itertools.product((0, 1), repeat=d.size)
        if float(np.dot(signs, ranks)) <= tail + 1e-9
    )
    return min(1.0, 2.0 * hits / 2**d.size)


STAT_FIXTURES = [
    [1.0, 2.0, 3.0, 4.0, 5.0],
    [1.0, 2.0, 3.0, 4.0, 5.0, -1.0],
    [0.3, -0.1, 0.4],
    [2.0, -1.0, 0.5, 0.5, 3.0, -2.5, 1.5, 4.0],
    [-0.2, 0.7, 1.1, 0.0, 0.9],
]


def check_stat_tests() -> list[CheckResult]:
    worst_t = worst_w = 0.0
    for diffs in STAT_FIXTURES:
        zeros = [0.0] * len(diffs)
        t = paired_t_test(diffs, zeros)
        if t.statistic is not None:
            reference = 2.0 * (1.0 - t_cdf_reference(abs(t.statistic), t.df))
            worst_t = max(worst_t, abs(t.p_value - reference))
        w = wilcoxon_signed_rank(diffs, zeros)
        worst_w = max(worst_w, abs(w.p_value - wilcoxon_reference(diffs)))
    return [
        CheckResult("paired t-test p-values", worst_t < REFERENCE_P_TOLERANCE, f"max |p - reference| = {worst_t:.2e}"),
        CheckResult("Wilcoxon exact p-values", worst_w < REFERENCE_P_TOLERANCE, f"max |p - enumeration| = {worst_w:.2e}"),
    ]


def run_all(
    seed: int,
    scale: Optional[VerifyScale] = None,
    workers: int | None = None,
    progress: Optional[Callable[[CheckResult], None]] = None,
) -> list[CheckResult]:
    """Run every suite under ``seed``; ``progress`` sees each result as it lands."""
    scale = scale or VerifyScale()
    root = RngStream(seed, 7)
    suites = [
        lambda: check_mask_moments(root.substream(0), scale, workers),
        lambda: check_layer_moments(root.substream(1), scale, workers),
        lambda: check_ratio_laws(root.substream(2), scale),
        check_sigmoid_approximation,
        lambda: check_linear_decomposition(root.substream(3), scale, workers),
        lambda: check_expected_gradients(root.substream(4), scale, workers),
        lambda: check_backprop(root.substream(5), scale),
        check_stat_tests,
    ]
    results = []
    for suite in suites:
        for result in suite():
            level = logging.INFO if result.passed else logging.WARNING
            logger.log(level, f"{'PASS' if result.passed else 'FAIL'} {result.name}: {result.detail}")
            results.append(result)
            if progress is not None:
                progress(result)
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max((len(r.name) for r in results), default=0)
    lines = [f"{'PASS' if r.passed else 'FAIL'}  {r.name.ljust(width)}  {r.detail}" for r in results]
    return "\n".join(lines)

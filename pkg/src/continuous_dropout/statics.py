"""Static properties of masked layers and their Monte-Carlo oracles.

For a masked linear layer ``S = W (m * I)`` with i.i.d. mask entries of
mean ``mu`` and variance ``v``::

    E[S]           = mu * W I
    Cov(S_i, S_l)  = v * sum_j w_ij w_lj I_j^2

and a sigmoid unit fed by an approximately normal ``S`` has
``E[O] ~= sigmoid(mu_S / sqrt(1 + pi var_S / 8))``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy import integrate, stats

from .activations import DEFAULT_SIGMOID, ActivationKind, SigmoidParams, sigmoid
from .config import MIN_MOMENT_SAMPLES
from .errors import DimensionError, QuadratureError, SampleSizeError, UnsupportedActivationError, ValidationError
from .masks import MaskDistribution, MaskKind, MomentMode, RngStream, format_spec, mask_moments, sample_mask
from .montecarlo import estimate_moments
from .network import Network, forward_train
from .reports import ReportMixin, optional_array

__all__ = [
    "MomentReport",
    "MomentSource",
    "SigmoidParams",
    "linear_output_moments",
    "mc_output_moments",
    "sigmoid_expectation",
    "sigmoid_expectation_quadrature",
    "propagate_expectations",
]

QUADRATURE_TOLERANCE = 1e-8
DEFAULT_GRID_MU = tuple(np.linspace(-6.0, 6.0, 25))
DEFAULT_GRID_VAR = (0.0, 0.5, 1.0, 2.0, 4.0, 8.0)


class MomentSource(str, enum.Enum):
    CLOSED_FORM = "closed_form"
    MONTE_CARLO = "monte_carlo"


@dataclass
class MomentReport(ReportMixin):
    """First and second moments of the outputs of a masked linear layer."""

    expected: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray
    source: MomentSource
    mode: MomentMode = MomentMode.EFFECTIVE
    distribution: str = ""
    n_samples: Optional[int] = None
    standard_error: Optional[np.ndarray] = None
    expected_standard_error: Optional[np.ndarray] = None

    schema_name = "moment_report"

    @classmethod
    def from_dict(cls, data: dict) -> MomentReport:
        data = {k: v for k, v in data.items() if k not in ("schema", "schema_version")}
        for key in ("expected", "variance", "covariance", "standard_error", "expected_standard_error"):
            data[key] = optional_array(data.get(key))
        data["source"] = MomentSource(data["source"])
        data["mode"] = MomentMode(data.get("mode", MomentMode.EFFECTIVE))
        return cls(**data)


def _check_layer(W, I) -> tuple[np.ndarray, np.ndarray]:
    W = np.array(W, dtype=float, ndmin=2)
    I = np.asarray(I, dtype=float).ravel()
    if W.ndim != 2 or W.shape[1] != I.size:
        raise DimensionError(f"weights of shape {W.shape} do not fit an input of length {I.size}")
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(I))):
        raise ValidationError("weights and inputs must be finite")
    return W, I


def linear_output_moments(
    W, I, dist: MaskDistribution, mode: MomentMode = MomentMode.EFFECTIVE
) -> MomentReport:
    """Closed-form ``E[S]``, ``Var(S)`` and ``Cov(S_i, S_l)`` for ``S = W (m * I)``."""
    W, I = _check_layer(W, I)
    mean, var = mask_moments(dist, mode)
    cov = var * ((W * I**2) @ W.T)
    return MomentReport(
        expected=mean * (W @ I),
        variance=np.diag(cov).copy(),
        covariance=cov,
        source=MomentSource.CLOSED_FORM,
        mode=mode,
        distribution=format_spec(dist),
    )


def mc_output_moments(
    W,
    I,
    dist: MaskDistribution,
    n_samples: int,
    rng: RngStream,
    workers: int | None = None,
) -> MomentReport:
    """Monte-Carlo oracle for :func:`linear_output_moments`.

    Samples ``dist`` as given, so an unclipped Gaussian checks the pre-clip
    algebra and a clipped one checks the effective moments.
    """
    W, I = _check_layer(W, I)
    if n_samples < MIN_MOMENT_SAMPLES:
        raise SampleSizeError(f"need at least {MIN_MOMENT_SAMPLES} samples, got {n_samples}")

    def _draw(stream: RngStream, size: int) -> np.ndarray:
        masks = sample_mask(dist, (size, I.size), stream)
        return (masks * I) @ W.T

    est = estimate_moments(_draw, n_samples, rng, shift=mask_moments(dist).mean * (W @ I), workers=workers)
    return MomentReport(
        expected=est.mean,
        variance=np.diag(est.covariance).copy(),
        covariance=est.covariance,
        source=MomentSource.MONTE_CARLO,
        mode=MomentMode.EFFECTIVE if dist.clipped else MomentMode.NOMINAL,
        distribution=format_spec(dist),
        n_samples=est.n_samples,
        standard_error=est.covariance_se,
        expected_standard_error=est.mean_se,
    )


def normality_diagnostic(W, I, dist: MaskDistribution, n_samples: int, rng: RngStream) -> list[float]:
    """Kolmogorov-Smirnov distance of each ``S_i`` from a fitted normal.

    A diagnostic only: with finitely many inputs ``S`` is never exactly normal.
    """
    W, I = _check_layer(W, I)
    s = (sample_mask(dist, (n_samples, I.size), rng) * I) @ W.T
    out = []
    for column in s.T:
        std = column.std()
        if std == 0.0:
            out.append(0.0)
            continue
        out.append(float(stats.kstest((column - column.mean()) / std, "norm").statistic))
    return out


def sigmoid_expectation(mu_S, var_S, params: SigmoidParams = DEFAULT_SIGMOID):
    """Approximate ``E[sigmoid(S)]`` for ``S ~ N(mu_S, var_S)``."""
    mu = np.asarray(mu_S, dtype=float)
    var = np.asarray(var_S, dtype=float)
    if np.any(var < 0):
        raise ValidationError(f"variance must be non-negative, got {var_S}")
    value = sigmoid(mu / np.sqrt(1.0 + math.pi * var / 8.0), params)
    return float(value) if np.ndim(value) == 0 else value


def sigmoid_expectation_quadrature(mu_S: float, var_S: float, params: SigmoidParams = DEFAULT_SIGMOID) -> float:
    """``E[sigmoid(S)]`` by adaptive quadrature against the normal density."""
    if var_S < 0:
        raise ValidationError(f"variance must be non-negative, got {var_S}")
    if var_S == 0:
        return float(sigmoid(mu_S, params))
    sigma = math.sqrt(var_S)

    def _integrand(z: float) -> float:
        return float(sigmoid(mu_S + sigma * z, params)) * math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)

    # QUADPACK maps the infinite range onto (0, 1] and refines adaptively
    value, abserr = integrate.quad(_integrand, -np.inf, np.inf, epsabs=1e-11, epsrel=1e-11, limit=200)
    if not abserr < QUADRATURE_TOLERANCE:
        raise QuadratureError(f"quadrature error estimate {abserr:.3g} exceeds {QUADRATURE_TOLERANCE}")
    return float(value)


def approximation_error_grid(
    mus=DEFAULT_GRID_MU,
    variances=DEFAULT_GRID_VAR,
    params: SigmoidParams = DEFAULT_SIGMOID,
) -> pd.DataFrame:
    """Approximation vs quadrature over a ``(mu_S, var_S)`` grid."""
    rows = []
    for var in variances:
        for mu in mus:
            approx = sigmoid_expectation(mu, var, params)
            exact = sigmoid_expectation_quadrature(mu, var, params)
            rows.append(
                {
                    "mu_s": float(mu),
                    "var_s": float(var),
                    "approximation": approx,
                    "quadrature": exact,
                    "abs_error": abs(approx - exact),
                }
            )
    return pd.DataFrame(rows)


@dataclass
class LayerExpectation:
    expected_s: np.ndarray
    variance_s: np.ndarray
    expected_o: np.ndarray


def propagate_expectations(
    net: Network,
    x,
    dist: Optional[MaskDistribution] = None,
    mode: MomentMode = MomentMode.NOMINAL,
) -> list[LayerExpectation]:
    """Layer-wise expected pre-activations and outputs of a sigmoid network.

    ``dist`` masks every layer input when given; otherwise each layer's own
    dropout is used. Continuous masks use the variance-corrected sigmoid,
    Bernoulli masks the plain sigmoid of ``E[S]``.
    """
    I = np.asarray(x, dtype=float).ravel()
    if I.size != net.input_dim:
        raise DimensionError(f"input of length {I.size} does not fit input dimension {net.input_dim}")
    out = []
    for index, layer in enumerate(net.layers):
        if layer.activation is not ActivationKind.SIGMOID:
            raise UnsupportedActivationError(
                f"layer {index} uses {layer.activation.value}; the recursion holds for sigmoid units only"
            )
        law = dist if dist is not None else layer.dropout
        mean, var = (1.0, 0.0) if law is None else mask_moments(law, mode)
        expected_s = mean * (layer.weights @ I) + layer.bias
        variance_s = var * ((layer.weights**2) @ (I**2))
        if law is None or law.kind is MaskKind.BERNOULLI:
            expected_o = sigmoid(expected_s, layer.sigmoid)
        else:
            expected_o = sigmoid_expectation(expected_s, variance_s, layer.sigmoid)
        out.append(LayerExpectation(expected_s, variance_s, np.asarray(expected_o, dtype=float)))
        I = np.asarray(expected_o, dtype=float)
    return out


def mc_forward_expectations(
    net: Network,
    x,
    n_samples: int,
    rng: RngStream,
    dist: Optional[MaskDistribution] = None,
    workers: int | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Monte-Carlo ``(E[O], standard error)`` per layer for a single input."""
    if n_samples < MIN_MOMENT_SAMPLES:
        raise SampleSizeError(f"need at least {MIN_MOMENT_SAMPLES} samples, got {n_samples}")
    noisy = net.with_dropout(dist) if dist is not None else net
    x = np.asarray(x, dtype=float).reshape(1, -1)
    widths = [layer.out_dim for layer in noisy.layers]

    def _draw(stream: RngStream, size: int) -> np.ndarray:
        trace = forward_train(noisy, np.repeat(x, size, axis=0), stream)
        return np.hstack(trace.activations)

    shift = np.hstack([e.expected_o for e in propagate_expectations(noisy, x)]) if all(
        layer.activation is ActivationKind.SIGMOID for layer in noisy.layers
    ) else np.zeros(sum(widths))
    est = estimate_moments(_draw, n_samples, rng, shift=shift, workers=workers)
    bounds = np.cumsum([0] + widths)
    return [(est.mean[a:b], est.mean_se[a:b]) for a, b in zip(bounds, bounds[1:])]

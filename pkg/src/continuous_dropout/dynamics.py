"""Training-dynamics algebra for single linear and sigmoidal units.

For a linear unit ``O = sum_i w_i m_i I_i`` under quadratic loss the
expected dropout error splits exactly into the ensemble error plus a
regularizer::

    E[E_D] = E_ENS + 1/2 sum_i w_i^2 I_i^2 Var(m)

Linear identities are checked with unclipped Gaussian masks; clipping
breaks them by construction and is only ever reported.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .activations import DEFAULT_SIGMOID, SigmoidParams, sigmoid, sigmoid_slope
from .config import MIN_ERROR_SAMPLES
from .errors import DimensionError, SampleSizeError, ValidationError
from .masks import MaskDistribution, MomentMode, RngStream, format_spec, mask_moments, sample_mask
from .montecarlo import estimate_moments
from .network import LossKind
from .reports import ReportMixin
from .statics import sigmoid_expectation

MAX_EXHAUSTIVE_INPUTS = 12


class McEstimate(NamedTuple):
    mean: float
    standard_error: float


class McVector(NamedTuple):
    mean: np.ndarray
    standard_error: np.ndarray


@dataclass
class ErrorDecomposition(ReportMixin):
    """``E[E_D] = E_ENS + regularizer`` for one unit, optionally with its MC check."""

    e_ens: float
    regularizer: float
    predicted_e_d: float = math.nan
    mc_e_d: Optional[float] = None
    mc_standard_error: Optional[float] = None
    mode: MomentMode = MomentMode.NOMINAL
    distribution: str = ""

    schema_name = "error_decomposition"

    def __post_init__(self):
        self.mode = MomentMode(self.mode)
        self.predicted_e_d = self.e_ens + self.regularizer

    def with_oracle(self, estimate: McEstimate) -> ErrorDecomposition:
        self.mc_e_d = estimate.mean
        self.mc_standard_error = estimate.standard_error
        return self

    @property
    def residual(self) -> Optional[float]:
        return None if self.mc_e_d is None else self.mc_e_d - self.predicted_e_d


@dataclass
class SigmoidalRegularizer:
    value: float
    bernoulli_analogue: float
    mu_s: float
    var_s: float


def _unit(w, I) -> tuple[np.ndarray, np.ndarray]:
    w = np.asarray(w, dtype=float).ravel()
    I = np.asarray(I, dtype=float).ravel()
    if w.shape != I.shape:
        raise DimensionError(f"weights of length {w.size} do not match inputs of length {I.size}")
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(I))):
        raise ValidationError("weights and inputs must be finite")
    return w, I


def ensemble_error_linear(w, I, t: float, mask_mean: float) -> float:
    """Quadratic error of the mean network ``1/2 (t - mu sum_i w_i I_i)^2``."""
    w, I = _unit(w, I)
    residual = t - mask_mean * float(np.dot(w, I))
    return 0.5 * residual * residual


def expected_dropout_error_linear(
    w, I, t: float, dist: MaskDistribution, mode: MomentMode = MomentMode.NOMINAL
) -> ErrorDecomposition:
    """Closed-form expected quadratic dropout error of a linear unit."""
    w, I = _unit(w, I)
    mean, var = mask_moments(dist, mode)
    return ErrorDecomposition(
        e_ens=ensemble_error_linear(w, I, t, mean),
        regularizer=0.5 * float(np.sum(w**2 * I**2)) * var,
        mode=mode,
        distribution=format_spec(dist),
    )


def expected_gradient_linear(w, I, t: float, dist: MaskDistribution, mode: MomentMode = MomentMode.NOMINAL) -> np.ndarray:
    """``E[dE_D/dw_i] = -(t - O_ENS) mu I_i + w_i I_i^2 Var(m)``."""
    w, I = _unit(w, I)
    mean, var = mask_moments(dist, mode)
    o_ens = mean * float(np.dot(w, I))
    return -(t - o_ens) * mean * I + w * I**2 * var


def _bernoulli_outcomes(n: int, p: float) -> tuple[np.ndarray, np.ndarray]:
    if n > MAX_EXHAUSTIVE_INPUTS:
        raise ValidationError(f"exhaustive enumeration supports n <= {MAX_EXHAUSTIVE_INPUTS}, got {n}")
    masks = np.array(list(itertools.product((0.0, 1.0), repeat=n)))
    kept = masks.sum(axis=1)
    probs = p**kept * (1.0 - p) ** (n - kept)
    return masks, probs


def exhaustive_bernoulli_error(w, I, t: float, p: float) -> float:
    """Exact ``E[E_D]`` for Bernoulli masks by enumerating all ``2^n`` outcomes."""
    w, I = _unit(w, I)
    masks, probs = _bernoulli_outcomes(w.size, p)
    residual = t - masks @ (w * I)
    return float(np.dot(probs, 0.5 * residual**2))


def exhaustive_bernoulli_gradient(w, I, t: float, p: float) -> np.ndarray:
    w, I = _unit(w, I)
    masks, probs = _bernoulli_outcomes(w.size, p)
    residual = t - masks @ (w * I)
    return probs @ (-(residual[:, None]) * masks * I)


def _check_samples(n_samples: int) -> None:
    if n_samples < MIN_ERROR_SAMPLES:
        raise SampleSizeError(f"need at least {MIN_ERROR_SAMPLES} samples, got {n_samples}")


def mc_dropout_error_linear(
    w, I, t: float, dist: MaskDistribution, n_samples: int, rng: RngStream, workers: int | None = None
) -> McEstimate:
    """Sample mean of ``1/2 (t - sum_i w_i m_i I_i)^2`` over independent masks."""
    w, I = _unit(w, I)
    _check_samples(n_samples)
    if dist.is_deterministic:
        return McEstimate(ensemble_error_linear(w, I, t, mask_moments(dist).mean), 0.0)

    def _draw(stream: RngStream, size: int) -> np.ndarray:
        masks = sample_mask(dist, (size, w.size), stream)
        residual = t - masks @ (w * I)
        return (0.5 * residual**2)[:, None]

    shift = expected_dropout_error_linear(w, I, t, dist, MomentMode.EFFECTIVE).predicted_e_d
    est = estimate_moments(_draw, n_samples, rng, shift=np.array([shift]), workers=workers)
    return McEstimate(float(est.mean[0]), float(est.mean_se[0]))


def sigmoidal_regularizer(
    w,
    I,
    dist: MaskDistribution,
    params: SigmoidParams = DEFAULT_SIGMOID,
    mode: MomentMode = MomentMode.NOMINAL,
) -> SigmoidalRegularizer:
    """Approximate co-adaptation regularizer of a sigmoidal unit.

    ``1/2 lam sigmoid'(mu_S / sqrt(1 + pi var_S / 8))
    * sum_i sum_j w_i w_j mu^2 I_i I_j (pi/8 w_i^2 I_i^2 var) / (1 + pi/8 var_S)``
    next to the Bernoulli form ``1/2 lam sigmoid'(mu_S) sum_i w_i^2 I_i^2 Var(p)``
    for a Bernoulli law of the same mean. ``sigmoid'`` is the logistic slope
    ``o (1 - o)``; the gain enters once, through ``lam``.
    """
    w, I = _unit(w, I)
    mean, var = mask_moments(dist, mode)
    a = w * I
    mu_s = mean * float(a.sum())
    var_s = var * float(np.sum(a**2))
    denom = 1.0 + math.pi / 8.0 * var_s
    slope = float(sigmoid_slope(mu_s / math.sqrt(denom), params))
    double_sum = mean**2 * float(a.sum()) * float(np.sum(a * (math.pi / 8.0) * a**2 * var))
    value = 0.5 * params.lam * slope * double_sum / denom

    bernoulli_var = mean * (1.0 - mean) if 0.0 < mean < 1.0 else 0.0
    analogue = 0.5 * params.lam * float(sigmoid_slope(mu_s, params)) * float(np.sum(a**2)) * bernoulli_var
    return SigmoidalRegularizer(value=value, bernoulli_analogue=analogue, mu_s=mu_s, var_s=var_s)


def expected_gradient_sigmoid(
    w,
    I,
    t: float,
    dist: MaskDistribution,
    params: SigmoidParams = DEFAULT_SIGMOID,
    mode: MomentMode = MomentMode.NOMINAL,
    linearized: bool = False,
) -> np.ndarray:
    """Approximate expected relative-entropy gradient of a sigmoidal unit.

    Coordinate ``i`` is held at its mask mean while the others stay random,
    so its effective variance is ``sum_{j != i} w_j^2 I_j^2 var``. With
    ``linearized`` the difference of sigmoids is replaced by its first-order
    expansion.
    """
    w, I = _unit(w, I)
    mean, var = mask_moments(dist, mode)
    a = w * I
    mu_s = mean * float(a.sum())
    var_s = var * float(np.sum(a**2))
    o_ens = sigmoid_expectation(mu_s, var_s, params)
    ensemble = -params.lam * (t - o_ens) * mean * I
    if linearized:
        denom = 1.0 + math.pi * var_s / 8.0
        slope = float(sigmoid_slope(mu_s / math.sqrt(denom), params))
        shift = slope * (math.pi / 16.0) * mu_s * a**2 * var / denom
    else:
        var_rest = np.clip(var_s - var * a**2, 0.0, None)
        shift = sigmoid_expectation(np.full_like(a, mu_s), var_rest, params) - o_ens
    return ensemble + params.lam * mean * I * shift


def mc_expected_gradient(
    w,
    I,
    t: float,
    dist: MaskDistribution,
    loss: LossKind,
    n_samples: int,
    rng: RngStream,
    params: SigmoidParams = DEFAULT_SIGMOID,
    workers: int | None = None,
) -> McVector:
    """Monte-Carlo expected gradient of a single unit.

    ``QUADRATIC`` means a linear unit, ``RELATIVE_ENTROPY`` a sigmoidal one.
    """
    w, I = _unit(w, I)
    _check_samples(n_samples)
    loss = LossKind(loss)
    if loss is LossKind.CROSS_ENTROPY:
        raise ValidationError("single-unit gradients are defined for quadratic or relative-entropy loss")

    def _gradients(masks: np.ndarray) -> np.ndarray:
        s = masks @ (w * I)
        if loss is LossKind.QUADRATIC:
            return -(t - s)[:, None] * masks * I
        o = sigmoid(s, params)
        return -params.lam * (t - o)[:, None] * masks * I

    if dist.is_deterministic:
        exact = _gradients(np.full((1, w.size), mask_moments(dist).mean))[0]
        return McVector(exact, np.zeros_like(exact))

    def _draw(stream: RngStream, size: int) -> np.ndarray:
        return _gradients(sample_mask(dist, (size, w.size), stream))

    if loss is LossKind.QUADRATIC:
        shift = expected_gradient_linear(w, I, t, dist, MomentMode.EFFECTIVE)
    else:
        shift = expected_gradient_sigmoid(w, I, t, dist, params, MomentMode.EFFECTIVE)
    est = estimate_moments(_draw, n_samples, rng, shift=shift, workers=workers)
    return McVector(est.mean, est.mean_se)


def mc_sigmoidal_excess(
    w,
    I,
    t: float,
    dist: MaskDistribution,
    n_samples: int,
    rng: RngStream,
    params: SigmoidParams = DEFAULT_SIGMOID,
    mode: MomentMode = MomentMode.NOMINAL,
    workers: int | None = None,
) -> McEstimate:
    """Monte-Carlo ``E[E_D] - E_ENS`` for a sigmoidal unit under relative entropy.

    ``E_ENS`` uses the variance-corrected ensemble output, which is what the
    regularizer of :func:`sigmoidal_regularizer` is measured against.
    """
    w, I = _unit(w, I)
    _check_samples(n_samples)
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"relative-entropy targets must lie in [0, 1], got {t}")
    mean, var = mask_moments(dist, mode)
    a = w * I
    o_ens = sigmoid_expectation(mean * float(a.sum()), var * float(np.sum(a**2)), params)
    e_ens = _relative_entropy(t, np.array([o_ens]))[0]

    def _draw(stream: RngStream, size: int) -> np.ndarray:
        o = sigmoid(sample_mask(dist, (size, w.size), stream) @ a, params)
        return (_relative_entropy(t, o) - e_ens)[:, None]

    est = estimate_moments(_draw, n_samples, rng, shift=np.zeros(1), workers=workers)
    return McEstimate(float(est.mean[0]), float(est.mean_se[0]))


def _relative_entropy(t: float, o: np.ndarray) -> np.ndarray:
    oc = np.clip(o, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
    return -(t * np.log(oc) + (1.0 - t) * np.log1p(-oc))


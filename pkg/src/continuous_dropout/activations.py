"""Activation functions and their derivatives."""

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, softmax as _softmax

from .errors import ValidationError


class ActivationKind(str, enum.Enum):
    SIGMOID = "sigmoid"
    RELU = "relu"
    SOFTMAX = "softmax"
    IDENTITY = "identity"


@dataclass(frozen=True)
class SigmoidParams:
    """Logistic unit ``1 / (1 + c * exp(-lam * s))``."""

    c: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValidationError(f"sigmoid offset c must be positive, got {self.c}")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValidationError(f"sigmoid gain lambda must be positive, got {self.lam}")


DEFAULT_SIGMOID = SigmoidParams()


def sigmoid(s, params: SigmoidParams = DEFAULT_SIGMOID):
    # 1 / (1 + c e^{-lam s}) == expit(lam s - ln c)
    return expit(params.lam * np.asarray(s, dtype=float) - math.log(params.c))


def sigmoid_slope(s, params: SigmoidParams = DEFAULT_SIGMOID):
    """Logistic slope ``o (1 - o)``, without the gain factor."""
    o = sigmoid(s, params)
    return o * (1.0 - o)


def sigmoid_derivative(s, params: SigmoidParams = DEFAULT_SIGMOID):
    """``d sigmoid / d s``."""
    return params.lam * sigmoid_slope(s, params)


def activate(kind: ActivationKind, s: np.ndarray, params: SigmoidParams = DEFAULT_SIGMOID) -> np.ndarray:
    if kind is ActivationKind.SIGMOID:
        return sigmoid(s, params)
    if kind is ActivationKind.RELU:
        return np.maximum(s, 0.0)
    if kind is ActivationKind.SOFTMAX:
        return _softmax(s, axis=-1)
    return np.array(s, dtype=float, copy=True)


def backprop_activation(
    kind: ActivationKind,
    s: np.ndarray,
    o: np.ndarray,
    grad_o: np.ndarray,
    params: SigmoidParams = DEFAULT_SIGMOID,
) -> np.ndarray:
    """Map ``dL/dO`` to ``dL/dS`` row by row."""
    if kind is ActivationKind.SIGMOID:
        return grad_o * params.lam * o * (1.0 - o)
    if kind is ActivationKind.RELU:
        return grad_o * (s > 0)
    if kind is ActivationKind.SOFTMAX:
        # Jacobian-vector product of softmax
        return o * (grad_o - np.sum(grad_o * o, axis=-1, keepdims=True))
    return grad_o

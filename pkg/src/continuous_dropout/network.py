"""Dense feedforward network with masked forward pass and backpropagation.

Dropout masks multiply a layer's *input* before the affine map
(``S = W (m * I) + b``); biases are never masked. Each example in a batch
gets its own mask, and at test time every mask is replaced by its mean.
"""

from __future__ import annotations

import copy
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import log_softmax

from .activations import (
    DEFAULT_SIGMOID,
    ActivationKind,
    SigmoidParams,
    activate,
    backprop_activation,
)
from .errors import DimensionError, ValidationError
from .masks import MaskDistribution, RngStream, format_spec, mask_moments, parse_spec, sample_mask

NETWORK_FORMAT = "continuous-dropout-network"
NETWORK_FORMAT_VERSION = 1

_PROB_FLOOR = np.finfo(float).tiny
_PROB_CEIL = 1.0 - np.finfo(float).epsneg


class LossKind(str, enum.Enum):
    QUADRATIC = "quadratic"
    RELATIVE_ENTROPY = "relative_entropy"
    CROSS_ENTROPY = "cross_entropy"


class InitScheme(str, enum.Enum):
    NORMAL = "normal"
    UNIFORM_FAN = "uniform_fan"


@dataclass
class DenseLayer:
    """Affine map ``W (m * I) + b`` followed by an activation."""

    weights: np.ndarray
    bias: np.ndarray
    activation: ActivationKind = ActivationKind.IDENTITY
    sigmoid: SigmoidParams = DEFAULT_SIGMOID
    dropout: Optional[MaskDistribution] = None

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=float, ndmin=2)
        self.bias = np.array(self.bias, dtype=float, ndmin=1)
        self.activation = ActivationKind(self.activation)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionError(
                f"bias of shape {self.bias.shape} does not match weights {self.weights.shape}"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValidationError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class Network:
    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("a network needs at least one layer")
        for index, (prev, nxt) in enumerate(zip(self.layers, self.layers[1:])):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError(
                    f"layer {index} emits {prev.out_dim} values but layer {index + 1} expects {nxt.in_dim}"
                )
        for layer in self.layers[:-1]:
            if layer.activation is ActivationKind.SOFTMAX:
                raise ValidationError("softmax is only permitted on the final layer")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def has_dropout(self) -> bool:
        return any(layer.dropout is not None for layer in self.layers)

    def copy(self) -> Network:
        return copy.deepcopy(self)

    def with_dropout(self, dist: Optional[MaskDistribution]) -> Network:
        """Copy of the network with ``dist`` on every layer input."""
        return Network([replace(layer, weights=layer.weights.copy(), bias=layer.bias.copy(), dropout=dist)
                        for layer in self.layers])


@dataclass
class ForwardTrace:
    """Everything a masked forward pass computed, for exact backprop."""

    inputs: list[np.ndarray] = field(default_factory=list)
    masks: list[Optional[np.ndarray]] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)
    activations: list[np.ndarray] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


MaskSource = Callable[[int, DenseLayer, tuple[int, int]], Optional[np.ndarray]]


def _check_batch(net: Network, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimensionError(f"batch of shape {np.shape(batch)} does not fit input dimension {net.input_dim}")
    if np.isnan(x).any():
        raise ValidationError("batch contains NaN")
    return x


def _run(net: Network, x: np.ndarray, mask_for: MaskSource) -> ForwardTrace:
    trace = ForwardTrace()
    for index, layer in enumerate(net.layers):
        mask = mask_for(index, layer, (x.shape[0], layer.in_dim))
        masked = x if mask is None else x * mask
        s = masked @ layer.weights.T + layer.bias
        o = activate(layer.activation, s, layer.sigmoid)
        trace.inputs.append(x)
        trace.masks.append(mask)
        trace.pre_activations.append(s)
        trace.activations.append(o)
        x = o
    return trace


def forward_train(net: Network, batch, rng: RngStream) -> ForwardTrace:
    """Masked forward pass with a fresh mask per example and dropout site."""
    x = _check_batch(net, batch)

    def _sample(index, layer, shape):
        if layer.dropout is None:
            return None
        return sample_mask(layer.dropout, shape, rng.substream(index))

    return _run(net, x, _sample)


def forward_masked(net: Network, batch, masks: list) -> ForwardTrace:
    """Forward pass with caller-supplied masks (``None`` = no mask on that layer)."""
    x = _check_batch(net, batch)
    if len(masks) != len(net.layers):
        raise DimensionError(f"expected {len(net.layers)} masks, got {len(masks)}")

    def _given(index, layer, shape):
        if masks[index] is None:
            return None
        return np.broadcast_to(np.asarray(masks[index], dtype=float), shape)

    return _run(net, x, _given)


def forward_test(net: Network, batch) -> np.ndarray:
    """Deterministic pass scaling each dropout site by its mask mean."""
    x = _check_batch(net, batch)

    def _mean(index, layer, shape):
        return None if layer.dropout is None else np.full(shape, mask_moments(layer.dropout).mean)

    return _run(net, x, _mean).output


def _targets(net: Network, targets, n: int) -> np.ndarray:
    t = np.asarray(targets)
    k = net.output_dim
    if t.ndim == 1 and np.issubdtype(t.dtype, np.integer) and k > 1:
        onehot = np.zeros((n, k))
        onehot[np.arange(n), t] = 1.0
        return onehot
    t = np.asarray(t, dtype=float).reshape(n, -1)
    if t.shape[1] != k:
        raise DimensionError(f"targets of shape {np.shape(targets)} do not fit {k} outputs")
    return t


def _check_loss(net: Network, loss: LossKind) -> None:
    final = net.layers[-1].activation
    if loss is LossKind.CROSS_ENTROPY and final is not ActivationKind.SOFTMAX:
        raise ValidationError("cross-entropy loss requires a softmax output layer")
    if loss is LossKind.RELATIVE_ENTROPY and final not in (ActivationKind.SIGMOID, ActivationKind.SOFTMAX):
        raise ValidationError("relative-entropy loss requires outputs in (0, 1)")


def loss_value(net: Network, trace: ForwardTrace, targets, loss: LossKind) -> float:
    """Batch-mean loss of a recorded pass."""
    loss = LossKind(loss)
    _check_loss(net, loss)
    o = trace.output
    t = _targets(net, targets, o.shape[0])
    if loss is LossKind.QUADRATIC:
        per_example = 0.5 * np.sum((t - o) ** 2, axis=1)
    elif loss is LossKind.RELATIVE_ENTROPY:
        oc = np.clip(o, _PROB_FLOOR, _PROB_CEIL)
        per_example = -np.sum(t * np.log(oc) + (1.0 - t) * np.log1p(-oc), axis=1)
    else:
        per_example = -np.sum(t * log_softmax(trace.pre_activations[-1], axis=1), axis=1)
    return float(np.mean(per_example))


def _check_trace(net: Network, trace: ForwardTrace) -> None:
    if len(trace.activations) != len(net.layers):
        raise DimensionError("trace was not produced by this network")
    for layer, x, s in zip(net.layers, trace.inputs, trace.pre_activations):
        if x.shape[1] != layer.in_dim or s.shape[1] != layer.out_dim:
            raise DimensionError("trace was not produced by this network")


def backward(net: Network, trace: ForwardTrace, targets, loss: LossKind) -> Gradients:
    """Exact gradients of the realized (masked) batch-mean loss."""
    loss = LossKind(loss)
    _check_trace(net, trace)
    _check_loss(net, loss)
    last = net.layers[-1]
    o = trace.output
    n = o.shape[0]
    t = _targets(net, targets, n)

    if loss is LossKind.CROSS_ENTROPY or (
        loss is LossKind.RELATIVE_ENTROPY and last.activation is ActivationKind.SIGMOID
    ):
        # fused softmax/cross-entropy and sigmoid/relative-entropy
        scale = last.sigmoid.lam if last.activation is ActivationKind.SIGMOID else 1.0
        delta = scale * (o - t) / n
    else:
        if loss is LossKind.QUADRATIC:
            grad_o = (o - t) / n
        else:
            oc = np.clip(o, _PROB_FLOOR, _PROB_CEIL)
            grad_o = (-t / oc + (1.0 - t) / (1.0 - oc)) / n
        delta = backprop_activation(last.activation, trace.pre_activations[-1], o, grad_o, last.sigmoid)

    grads_w: list[np.ndarray] = [np.empty(0)] * len(net.layers)
    grads_b: list[np.ndarray] = [np.empty(0)] * len(net.layers)
    for index in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[index]
        mask = trace.masks[index]
        masked = trace.inputs[index] if mask is None else trace.inputs[index] * mask
        grads_w[index] = delta.T @ masked
        grads_b[index] = delta.sum(axis=0)
        if index == 0:
            break
        grad_x = delta @ layer.weights
        if mask is not None:
            grad_x = grad_x * mask
        prev = net.layers[index - 1]
        delta = backprop_activation(
            prev.activation, trace.pre_activations[index - 1], trace.activations[index - 1], grad_x, prev.sigmoid
        )
    return Gradients(grads_w, grads_b)


def numeric_gradients(net: Network, batch, masks: list, targets, loss: LossKind, step: float = 1e-5) -> Gradients:
    """Central finite differences of the loss under fixed masks."""
    work = net.copy()
    grads_w, grads_b = [], []

    def _loss() -> float:
        return loss_value(work, forward_masked(work, batch, masks), targets, loss)

    for layer in work.layers:
        for param, out in ((layer.weights, grads_w), (layer.bias, grads_b)):
            grad = np.zeros_like(param)
            for idx in np.ndindex(param.shape):
                saved = param[idx]
                param[idx] = saved + step
                up = _loss()
                param[idx] = saved - step
                down = _loss()
                param[idx] = saved
                grad[idx] = (up - down) / (2.0 * step)
            out.append(grad)
    return Gradients(grads_w, grads_b)


def apply_maxnorm(net: Network, c_max: float) -> None:
    """Project every unit's incoming weight vector onto the L2 ball of radius ``c_max``."""
    if not c_max > 0:
        raise ValidationError(f"max-norm radius must be positive, got {c_max}")
    if math.isinf(c_max):
        return
    for layer in net.layers:
        norms = np.linalg.norm(layer.weights, axis=1)
        too_long = norms > c_max
        if np.any(too_long):
            layer.weights[too_long] *= (c_max / norms[too_long])[:, None]


@dataclass(frozen=True)
class NetSpec:
    """Architecture of a fully connected classifier.

    ``dropout`` masks the inputs of every layer after the first (the hidden
    units); ``input_dropout`` optionally masks the raw input as well.
    """

    layer_sizes: tuple[int, ...]
    hidden_activation: ActivationKind = ActivationKind.RELU
    output_activation: ActivationKind = ActivationKind.SOFTMAX
    sigmoid: SigmoidParams = DEFAULT_SIGMOID

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or any(int(n) < 1 for n in self.layer_sizes):
            raise ValidationError(f"invalid layer sizes {self.layer_sizes}")


def build_network(
    spec: NetSpec,
    rng: RngStream,
    dropout: Optional[MaskDistribution] = None,
    input_dropout: Optional[MaskDistribution] = None,
    init: InitScheme = InitScheme.NORMAL,
    init_std: float = 0.01,
) -> Network:
    """Freshly initialised network; weights depend on ``(spec, rng, init)`` only."""
    gen = rng.generator()
    sizes = spec.layer_sizes
    layers = []
    for index, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        if InitScheme(init) is InitScheme.NORMAL:
            w = gen.normal(0.0, init_std, size=(n_out, n_in))
        else:
            bound = math.sqrt(6.0 / (n_in + n_out))
            w = gen.uniform(-bound, bound, size=(n_out, n_in))
        final = index == len(sizes) - 2
        layers.append(
            DenseLayer(
                weights=w,
                bias=np.zeros(n_out),
                activation=spec.output_activation if final else spec.hidden_activation,
                sigmoid=spec.sigmoid,
                dropout=input_dropout if index == 0 else dropout,
            )
        )
    return Network(layers)


def weights_digest(net: Network) -> str:
    """SHA-256 over all parameters; equal digests mean identical weights."""
    h = hashlib.sha256()
    for layer in net.layers:
        h.update(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return h.hexdigest()


def save_network(net: Network, path: str) -> None:
    """Write a versioned JSON weight file; floats round-trip bit-exactly."""
    payload = {
        "format": NETWORK_FORMAT,
        "version": NETWORK_FORMAT_VERSION,
        "layers": [
            {
                "in_dim": layer.in_dim,
                "out_dim": layer.out_dim,
                "activation": layer.activation.value,
                "sigmoid": {"c": layer.sigmoid.c, "lam": layer.sigmoid.lam},
                "dropout": None if layer.dropout is None else format_spec(layer.dropout),
                "weights": layer.weights.tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in net.layers
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)


def load_network(path: str) -> Network:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format") != NETWORK_FORMAT or payload.get("version") != NETWORK_FORMAT_VERSION:
        raise ValidationError(f"{path} is not a version {NETWORK_FORMAT_VERSION} network file")
    layers = []
    for entry in payload["layers"]:
        w = np.array(entry["weights"], dtype=float).reshape(entry["out_dim"], entry["in_dim"])
        layers.append(
            DenseLayer(
                weights=w,
                bias=np.array(entry["bias"], dtype=float),
                activation=ActivationKind(entry["activation"]),
                sigmoid=SigmoidParams(**entry["sigmoid"]),
                dropout=None if entry["dropout"] is None else parse_spec(entry["dropout"]),
            )
        )
    return Network(layers)

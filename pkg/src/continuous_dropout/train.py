"""Mini-batch SGD training and paired multi-run comparisons.

Protocol: momentum ramped linearly from ``momentum_start`` to
``momentum_end``, learning rate decayed exponentially per epoch, and a
max-norm projection of every unit's incoming weights after each update.
A ``seed`` fixes initialisation, shuffling and mask noise, so a run is
reproducible bit for bit in a fixed floating-point environment.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import toml

from . import config
from .activations import ActivationKind
from .data import Dataset
from .errors import ConfigError, DivergenceError, PairingError, ValidationError
from .masks import MaskDistribution, RngStream, format_spec, parse_spec
from .network import (
    InitScheme,
    LossKind,
    NetSpec,
    Network,
    apply_maxnorm,
    backward,
    build_network,
    forward_test,
    forward_train,
    loss_value,
    weights_digest,
)
from .parallel import map_in_threads
from .reports import ReportMixin
from .stattests import paired_t_test, wilcoxon_signed_rank

logger = logging.getLogger(__name__)

# stream ids under a run seed
INIT_STREAM = 11
SHUFFLE_STREAM = 12
MASK_STREAM = 13

EVAL_BATCH = 10_000


def _as_dist(value) -> Optional[MaskDistribution]:
    if value is None or isinstance(value, MaskDistribution):
        return value
    if isinstance(value, str) and value.strip().lower() in ("", "none"):
        return None
    return parse_spec(str(value))


def dist_label(dist: Optional[MaskDistribution]) -> str:
    return "none" if dist is None else format_spec(dist)


@dataclass
class TrainConfig(ReportMixin):
    epochs: int = config.DEFAULT_EPOCHS
    batch_size: int = config.DEFAULT_BATCH_SIZE
    lr_initial: float = config.DEFAULT_LR_INITIAL
    lr_decay: float = config.DEFAULT_LR_DECAY
    momentum_start: float = config.DEFAULT_MOMENTUM_START
    momentum_end: float = config.DEFAULT_MOMENTUM_END
    momentum_ramp_epochs: int = config.DEFAULT_MOMENTUM_RAMP_EPOCHS
    maxnorm_c: float = config.DEFAULT_MAXNORM_C
    seed: int = 0
    dropout: Optional[MaskDistribution] = None
    input_dropout: Optional[MaskDistribution] = None
    init: InitScheme = InitScheme.NORMAL
    init_std: float = config.DEFAULT_INIT_STD

    schema_name = "train_config"

    def __post_init__(self):
        self.dropout = _as_dist(self.dropout)
        self.input_dropout = _as_dist(self.input_dropout)
        try:
            self.init = InitScheme(self.init)
        except ValueError as exc:
            raise ConfigError(f"unknown init scheme {self.init!r}") from exc
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not self.lr_initial > 0 or not self.lr_decay > 0:
            raise ConfigError("learning rate and its decay must be positive")
        for name in ("momentum_start", "momentum_end"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.momentum_ramp_epochs < 0:
            raise ConfigError("momentum_ramp_epochs must be >= 0")
        if not self.maxnorm_c > 0:
            raise ConfigError("maxnorm_c must be positive (use inf to disable)")
        if not self.init_std > 0:
            raise ConfigError("init_std must be positive")

    def momentum(self, epoch: int) -> float:
        if self.momentum_ramp_epochs == 0:
            return self.momentum_end
        frac = min(epoch / self.momentum_ramp_epochs, 1.0)
        return self.momentum_start + frac * (self.momentum_end - self.momentum_start)

    def learning_rate(self, epoch: int) -> float:
        return self.lr_initial * self.lr_decay**epoch

    def with_updates(self, **changes) -> TrainConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        data = super().to_dict()
        data["dropout"] = dist_label(self.dropout)
        data["input_dropout"] = dist_label(self.input_dropout)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known - {"schema", "schema_version"}
        if unknown:
            raise ConfigError(f"unknown training settings: {sorted(unknown)}")
        return cls(**{k: v for k, v in data.items() if k in known})

    @classmethod
    def load(cls, path: str) -> TrainConfig:
        """Load settings from ``.json`` or ``.toml``; a ``[train]`` table is accepted."""
        ext = os.path.splitext(path)[1].lower()
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f) if ext == ".json" else toml.load(f)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read training config {path}: {exc}") from exc
        return cls.from_dict(data.get("train", data))


@dataclass
class RunReport(ReportMixin):
    seed: int
    distribution: str
    train_loss: list[float] = field(default_factory=list)
    validation_error: list[float] = field(default_factory=list)
    test_error: Optional[float] = None
    test_errors: list[float] = field(default_factory=list)
    init_digest: str = ""
    wall_time: float = field(default=0.0, compare=False)

    schema_name = "run_report"

    @property
    def final_error(self) -> float:
        if self.test_error is not None:
            return self.test_error
        return self.validation_error[-1] if self.validation_error else math.nan


@dataclass
class ComparisonReport(ReportMixin):
    method_a: str
    method_b: str
    errors_a: list[float]
    errors_b: list[float]
    mean_a: float
    std_a: float
    mean_b: float
    std_b: float
    t_statistic: Optional[float]
    p_value_t: float
    w_statistic: float
    p_value_w: float
    degenerate: bool
    init_digests: list[str] = field(default_factory=list)

    schema_name = "comparison_report"


def _loss_for(net: Network) -> LossKind:
    final = net.layers[-1].activation
    if final is ActivationKind.SOFTMAX:
        return LossKind.CROSS_ENTROPY
    if final is ActivationKind.SIGMOID:
        return LossKind.RELATIVE_ENTROPY
    return LossKind.QUADRATIC


def evaluate(net: Network, ds: Dataset) -> float:
    """0/1 error of ``argmax forward_test``; ties go to the lowest class index."""
    if ds.dim != net.input_dim:
        raise ValidationError(f"dataset has {ds.dim} features, network expects {net.input_dim}")
    wrong = 0
    for start in range(0, len(ds), EVAL_BATCH):
        outputs = forward_test(net, ds.inputs[start : start + EVAL_BATCH])
        wrong += int(np.sum(np.argmax(outputs, axis=1) != ds.labels[start : start + EVAL_BATCH]))
    return wrong / len(ds)


def train(
    net_spec: NetSpec,
    ds_train: Dataset,
    ds_val: Optional[Dataset],
    cfg: TrainConfig,
    ds_test: Optional[Dataset] = None,
) -> tuple[Network, RunReport]:
    """Train a freshly initialised network with masked SGD and momentum."""
    if ds_train.dim != net_spec.layer_sizes[0] or ds_train.n_classes != net_spec.layer_sizes[-1]:
        raise ValidationError(
            f"dataset ({ds_train.dim} features, {ds_train.n_classes} classes) does not fit {net_spec.layer_sizes}"
        )
    started = time.perf_counter()
    net = build_network(
        net_spec,
        RngStream(cfg.seed, INIT_STREAM),
        dropout=cfg.dropout,
        input_dropout=cfg.input_dropout,
        init=cfg.init,
        init_std=cfg.init_std,
    )
    report = RunReport(seed=cfg.seed, distribution=dist_label(cfg.dropout), init_digest=weights_digest(net))
    loss = _loss_for(net)
    velocity_w = [np.zeros_like(layer.weights) for layer in net.layers]
    velocity_b = [np.zeros_like(layer.bias) for layer in net.layers]
    shuffles = RngStream(cfg.seed, SHUFFLE_STREAM)
    noise = RngStream(cfg.seed, MASK_STREAM)
    targets = ds_train.labels if loss is LossKind.CROSS_ENTROPY else _one_hot(ds_train)

    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate(epoch)
        momentum = cfg.momentum(epoch)
        order = shuffles.substream(epoch).generator().permutation(len(ds_train))
        epoch_noise = noise.substream(epoch)
        total, batches = 0.0, 0
        for step, start in enumerate(range(0, len(ds_train), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            trace = forward_train(net, ds_train.inputs[idx], epoch_noise.substream(step))
            batch_loss = loss_value(net, trace, targets[idx], loss)
            if not math.isfinite(batch_loss):
                logger.error(f"Loss diverged at epoch {epoch}, step {step} (lr={lr:.4g})")
                raise DivergenceError(f"training loss became {batch_loss} at epoch {epoch}, step {step}")
            grads = backward(net, trace, targets[idx], loss)
            for layer, vw, vb, gw, gb in zip(net.layers, velocity_w, velocity_b, grads.weights, grads.biases):
                vw *= momentum
                vw -= lr * gw
                vb *= momentum
                vb -= lr * gb
                layer.weights += vw
                layer.bias += vb
            apply_maxnorm(net, cfg.maxnorm_c)
            total += batch_loss
            batches += 1
        report.train_loss.append(total / batches)
        if ds_val is not None:
            report.validation_error.append(evaluate(net, ds_val))
        if ds_test is not None:
            report.test_errors.append(evaluate(net, ds_test))
        val_error = report.validation_error[-1] if report.validation_error else math.nan
        logger.info(
            f"[{report.distribution} seed={cfg.seed}] epoch {epoch + 1}/{cfg.epochs} "
            f"loss={report.train_loss[-1]:.5f} val_error={val_error:.4f}"
        )

    if ds_test is not None:
        report.test_error = report.test_errors[-1] if report.test_errors else evaluate(net, ds_test)
    report.wall_time = time.perf_counter() - started
    return net, report


def _one_hot(ds: Dataset) -> np.ndarray:
    out = np.zeros((len(ds), ds.n_classes))
    out[np.arange(len(ds)), ds.labels] = 1.0
    return out


def _run_grid(
    net_spec: NetSpec,
    ds_train: Dataset,
    ds_val: Optional[Dataset],
    ds_test: Optional[Dataset],
    configs: list[TrainConfig],
    workers: int | None,
) -> list[RunReport]:
    def _one(cfg: TrainConfig) -> RunReport:
        return train(net_spec, ds_train, ds_val, cfg, ds_test)[1]

    return map_in_threads(_one, configs, workers)


def compare_methods(
    net_spec: NetSpec,
    ds_train: Dataset,
    ds_val: Optional[Dataset],
    cfg_base: TrainConfig,
    dists: Sequence[Optional[MaskDistribution]],
    n_runs: int,
    ds_test: Optional[Dataset] = None,
    workers: int | None = None,
) -> list[ComparisonReport]:
    """Train every method ``n_runs`` times and compare each pair of methods.

    Run ``i`` of every method uses seed ``cfg_base.seed + i``, hence the same
    initial weights; the comparison refuses to proceed if the weight digests
    disagree.
    """
    if n_runs < 2:
        raise ValidationError("paired tests need n_runs >= 2")
    if len(dists) < 2:
        raise ValidationError("compare needs at least two methods")
    labels = [dist_label(d) for d in dists]
    configs = [cfg_base.with_updates(seed=cfg_base.seed + run, dropout=dist) for dist in dists for run in range(n_runs)]
    reports = _run_grid(net_spec, ds_train, ds_val, ds_test, configs, workers)
    by_method = {label: reports[i * n_runs : (i + 1) * n_runs] for i, label in enumerate(labels)}
    digests = [r.init_digest for r in by_method[labels[0]]]
    for label in labels[1:]:
        if [r.init_digest for r in by_method[label]] != digests:
            raise PairingError(f"runs of {label} did not start from the weights of {labels[0]}")

    out = []
    for a, b in itertools.combinations(labels, 2):
        errors_a = [r.final_error for r in by_method[a]]
        errors_b = [r.final_error for r in by_method[b]]
        t = paired_t_test(errors_a, errors_b)
        w = wilcoxon_signed_rank(errors_a, errors_b)
        out.append(
            ComparisonReport(
                method_a=a,
                method_b=b,
                errors_a=errors_a,
                errors_b=errors_b,
                mean_a=float(np.mean(errors_a)),
                std_a=float(np.std(errors_a, ddof=1)),
                mean_b=float(np.mean(errors_b)),
                std_b=float(np.std(errors_b, ddof=1)),
                t_statistic=t.statistic,
                p_value_t=t.p_value,
                w_statistic=w.statistic,
                p_value_w=w.p_value,
                degenerate=t.degenerate or w.degenerate,
                init_digests=digests,
            )
        )
        logger.info(f"{a} vs {b}: p_t={t.p_value:.4g} p_w={w.p_value:.4g}")
    return out


def variance_sweep(
    net_spec: NetSpec,
    ds_train: Dataset,
    ds_val: Optional[Dataset],
    cfg: TrainConfig,
    sigma_sq_grid: Sequence[float],
    n_seeds: int = 1,
    ds_test: Optional[Dataset] = None,
    mu: float = 0.5,
    workers: int | None = None,
) -> pd.DataFrame:
    """Mean and spread of the final error for each clipped-Gaussian variance."""
    if not len(sigma_sq_grid):
        raise ValidationError("the variance grid is empty")
    if n_seeds < 1:
        raise ValidationError("n_seeds must be >= 1")
    configs = [
        cfg.with_updates(seed=cfg.seed + run, dropout=MaskDistribution.gaussian(mu, float(var)))
        for var in sigma_sq_grid
        for run in range(n_seeds)
    ]
    reports = _run_grid(net_spec, ds_train, ds_val, ds_test, configs, workers)
    rows = []
    for i, var in enumerate(sigma_sq_grid):
        errors = [r.final_error for r in reports[i * n_seeds : (i + 1) * n_seeds]]
        rows.append(
            {
                "sigma_sq": float(var),
                "mean_error": float(np.mean(errors)),
                "std_error": float(np.std(errors, ddof=1)) if n_seeds > 1 else 0.0,
                "n_runs": n_seeds,
            }
        )
    return pd.DataFrame(rows)

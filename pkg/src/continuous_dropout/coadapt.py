"""Co-adaptation analysis: covariance between pairs of hidden units.

For each input the dropout process is repeated ``n_repeats`` times, the
covariance of every unit pair ``i < l`` of one layer's activations is
estimated, and all pairs of all inputs are pooled into a histogram whose
counts are stored as ``log10``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .config import COV_CLIP_PERCENTILE, DEFAULT_COV_BINS
from .errors import NoStochasticMaskError, SampleSizeError, ValidationError
from .masks import MaskDistribution, RngStream
from .montecarlo import estimate_moments
from .network import Network, forward_test, forward_train
from .reports import ReportMixin, optional_array

logger = logging.getLogger(__name__)

MIN_REPEATS = 100


@dataclass
class PairCovariances:
    """Covariances ``Cov(O_i, O_l)`` per input (rows) and unit pair (columns)."""

    values: np.ndarray
    standard_errors: np.ndarray
    pairs: np.ndarray
    layer_index: int
    n_repeats: int

    @property
    def n_inputs(self) -> int:
        return self.values.shape[0]


@dataclass
class CovHistogram(ReportMixin):
    bin_edges: np.ndarray
    counts: np.ndarray
    log_counts: np.ndarray
    layer_index: int
    n_inputs: int
    n_repeats: int
    signed: bool = True
    distribution: str = ""

    schema_name = "cov_histogram"

    @classmethod
    def from_dict(cls, data: dict) -> CovHistogram:
        data = {k: v for k, v in data.items() if k not in ("schema", "schema_version")}
        data["bin_edges"] = optional_array(data["bin_edges"])
        data["counts"] = np.asarray(data["counts"], dtype=np.int64)
        data["log_counts"] = optional_array(data["log_counts"])
        return cls(**data)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "bin_left": self.bin_edges[:-1],
                "bin_right": self.bin_edges[1:],
                # log10(0) is left empty
                "log10_count": self.log_counts,
            }
        )


def pair_covariances(
    net: Network,
    layer: int,
    inputs: Sequence,
    n_repeats: int,
    rng: RngStream,
    workers: int | None = None,
    measure_dropout: Optional[MaskDistribution] = None,
) -> PairCovariances:
    """Monte-Carlo covariance of every unit pair of ``layer`` for each input.

    ``measure_dropout`` replaces the dropout of every hidden-layer input, so a network
    trained without dropout can be measured under the same noise.
    """
    if not 0 <= layer < len(net.layers):
        raise ValidationError(f"layer {layer} does not exist in a {len(net.layers)}-layer network")
    if n_repeats < MIN_REPEATS:
        raise SampleSizeError(f"need at least {MIN_REPEATS} repeats, got {n_repeats}")
    layers = net.layers[: layer + 1]
    if measure_dropout is not None:
        layers = [unit if i == 0 else replace(unit, dropout=measure_dropout) for i, unit in enumerate(layers)]
    head = Network(layers)
    if not head.has_dropout:
        raise NoStochasticMaskError(f"no dropout acts on or before layer {layer}")
    width = head.output_dim
    if width < 2:
        raise ValidationError(f"layer {layer} has a single unit and no pairs")
    upper = np.triu_indices(width, k=1)
    values, errors = [], []
    for index, x in enumerate(inputs):
        x = np.asarray(x, dtype=float).reshape(1, -1)

        def _draw(stream: RngStream, size: int, x=x) -> np.ndarray:
            return forward_train(head, np.repeat(x, size, axis=0), stream).output

        est = estimate_moments(_draw, n_repeats, rng.substream(index), shift=forward_test(head, x)[0], workers=workers)
        values.append(est.covariance[upper])
        errors.append(est.covariance_se[upper])
    logger.info(f"Estimated {upper[0].size} pair covariances of layer {layer} over {len(values)} inputs")
    return PairCovariances(
        values=np.array(values),
        standard_errors=np.array(errors),
        pairs=np.column_stack(upper),
        layer_index=layer,
        n_repeats=n_repeats,
    )


def default_bins(values, n_bins: int = DEFAULT_COV_BINS, signed: bool = True) -> np.ndarray:
    """Uniform bins over ``[-c, c]`` (``[0, c]`` unsigned) plus overflow bins.

    ``c`` is the 99.9th percentile of ``|cov|``; an all-zero sample gets
    ``c = 1`` so its mass lands in a single bin.
    """
    if isinstance(values, list):
        values = np.concatenate([np.ravel(v) for v in values]) if values else np.empty(0)
    magnitudes = np.abs(np.ravel(values))
    c = float(np.percentile(magnitudes, COV_CLIP_PERCENTILE)) if magnitudes.size else 0.0
    if c <= 0.0:
        c = 1.0
    if signed:
        return np.concatenate([[-np.inf], np.linspace(-c, c, n_bins + 1), [np.inf]])
    return np.concatenate([np.linspace(0.0, c, n_bins + 1), [np.inf]])


def shared_bins(samples: list, n_bins: int = DEFAULT_COV_BINS, signed: bool = True) -> np.ndarray:
    """Common bin edges for several covariance samples so fractions compare."""
    return default_bins([np.ravel(s) for s in samples], n_bins=n_bins, signed=signed)


def histogram(
    covariances: PairCovariances,
    bins: Optional[np.ndarray | int] = None,
    signed: bool = True,
    distribution: str = "",
) -> CovHistogram:
    values = covariances.values.ravel()
    if not signed:
        values = np.abs(values)
    if bins is None or isinstance(bins, (int, np.integer)):
        edges = default_bins(values, n_bins=DEFAULT_COV_BINS if bins is None else int(bins), signed=signed)
    else:
        edges = np.asarray(bins, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValidationError("bin edges must be a strictly increasing vector")
    index = np.searchsorted(edges, values, side="right") - 1
    inside = (index >= 0) & (index < edges.size - 1)
    counts = np.bincount(index[inside], minlength=edges.size - 1).astype(np.int64)
    with np.errstate(divide="ignore"):
        log_counts = np.where(counts > 0, np.log10(np.maximum(counts, 1)), np.nan)
    return CovHistogram(
        bin_edges=edges,
        counts=counts,
        log_counts=log_counts,
        layer_index=covariances.layer_index,
        n_inputs=covariances.n_inputs,
        n_repeats=covariances.n_repeats,
        signed=signed,
        distribution=distribution,
    )


def covariance_histogram(
    net: Network,
    layer: int,
    inputs: Sequence,
    n_repeats: int,
    rng: RngStream,
    bins: Optional[np.ndarray | int] = None,
    signed: bool = True,
    workers: int | None = None,
    measure_dropout: Optional[MaskDistribution] = None,
    distribution: str = "",
) -> CovHistogram:
    """Log-count histogram of pairwise unit covariances of ``layer``."""
    covariances = pair_covariances(net, layer, inputs, n_repeats, rng, workers=workers, measure_dropout=measure_dropout)
    return histogram(covariances, bins=bins, signed=signed, distribution=distribution)


def zero_bin_fraction(hist: CovHistogram) -> float:
    """Share of all pair covariances that fall in the bin containing 0."""
    index = int(np.searchsorted(hist.bin_edges, 0.0, side="right") - 1)
    total = hist.total
    return float(hist.counts[index]) / total if total else 0.0

"""Chunked Monte-Carlo accumulation shared by all oracles.

Work is split into fixed-size chunks; chunk ``i`` always draws from
``rng.substream(i)`` and chunk statistics are merged in chunk order, so an
estimate depends on ``(n_samples, rng)`` only, never on the worker count.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import MC_CHUNK_SIZE
from .masks import RngStream
from .parallel import map_in_threads

logger = logging.getLogger(__name__)

SampleFn = Callable[[RngStream, int], np.ndarray]


@dataclass
class McMoments:
    """Sample mean and unbiased covariance of a vector statistic."""

    n_samples: int
    mean: np.ndarray
    covariance: np.ndarray
    mean_se: np.ndarray
    covariance_se: np.ndarray


@dataclass
class _Sums:
    n: int
    d: np.ndarray
    dd: np.ndarray
    d2d2: np.ndarray

    def __add__(self, other):
        return _Sums(self.n + other.n, self.d + other.d, self.dd + other.dd, self.d2d2 + other.d2d2)


def chunk_sizes(n_samples: int, chunk_size: int = MC_CHUNK_SIZE) -> list[int]:
    full, rest = divmod(n_samples, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def estimate_moments(
    sample_fn: SampleFn,
    n_samples: int,
    rng: RngStream,
    shift: np.ndarray,
    workers: int | None = None,
    chunk_size: int = MC_CHUNK_SIZE,
) -> McMoments:
    """Estimate mean/covariance of ``sample_fn`` draws.

    ``sample_fn(stream, size)`` returns a ``(size, k)`` array. Deviations are
    accumulated around ``shift`` (ideally the exact mean) to keep the
    one-pass sums well conditioned.
    """
    shift = np.atleast_1d(np.asarray(shift, dtype=float))
    sizes = chunk_sizes(n_samples, chunk_size)

    def _chunk(index: int) -> _Sums:
        x = np.asarray(sample_fn(rng.substream(index), sizes[index]), dtype=float)
        d = x.reshape(sizes[index], -1) - shift
        d2 = d * d
        return _Sums(d.shape[0], d.sum(axis=0), d.T @ d, d2.T @ d2)

    parts = map_in_threads(_chunk, range(len(sizes)), workers)
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    n = total.n
    d_bar = total.d / n
    cov = (total.dd - n * np.outer(d_bar, d_bar)) / (n - 1)
    cov = 0.5 * (cov + cov.T)
    var = np.clip(np.diag(cov), 0.0, None)
    # fourth-moment term for the standard error of each covariance entry
    m22 = total.d2d2 / n
    cov_se = np.sqrt(np.clip(m22 - cov * cov, 0.0, None) / n)
    logger.info(f"Monte-Carlo estimate over {n} samples in {len(sizes)} chunks")
    return McMoments(
        n_samples=n,
        mean=shift + d_bar,
        covariance=cov,
        mean_se=np.sqrt(var / n),
        covariance_se=cov_se,
    )

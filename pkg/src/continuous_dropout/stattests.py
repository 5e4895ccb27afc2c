"""Paired significance tests for comparing training methods run by run."""

from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np
from scipy import stats

from .errors import ValidationError

EXACT_WILCOXON_MAX_N = 25


class TTestResult(NamedTuple):
    statistic: Optional[float]
    p_value: float
    df: int
    mean_difference: float
    degenerate: bool


class WilcoxonResult(NamedTuple):
    statistic: float
    w_plus: float
    n_effective: int
    p_value: float
    exact: bool
    degenerate: bool


def _differences(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValidationError(f"paired samples differ in length: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValidationError("paired tests need at least two pairs")
    return a - b


def paired_t_test(a, b) -> TTestResult:
    """Two-sided paired t-test on ``a - b``.

    A zero-variance difference vector has no t statistic; it is reported as
    ``p = 1`` with ``degenerate`` set.
    """
    d = _differences(a, b)
    n = d.size
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        return TTestResult(None, 1.0, n - 1, mean, True)
    t = mean / (sd / math.sqrt(n))
    p = float(2.0 * stats.t.sf(abs(t), n - 1))
    return TTestResult(t, min(p, 1.0), n - 1, mean, False)


def signed_rank_null(doubled_ranks: np.ndarray) -> np.ndarray:
    """Null counts of ``2 W+`` over all ``2^n`` sign assignments.

    Works on doubled ranks so tied (half-integer) ranks stay integral.
    """
    counts = np.zeros(int(doubled_ranks.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a, b) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on ``a - b``.

    Zero differences are dropped and ties get average ranks. The null
    distribution is enumerated exactly up to 25 non-zero pairs; above that a
    tie-corrected normal approximation with continuity correction is used.
    """
    d = _differences(a, b)
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 0.0, 0, 1.0, True, True)
    ranks = stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= EXACT_WILCOXON_MAX_N:
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        null = signed_rank_null(doubled)
        lower_tail = null[: int(round(2.0 * w)) + 1].sum() / float(2**n)
        return WilcoxonResult(w, w_plus, n, float(min(1.0, 2.0 * lower_tail)), True, False)
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_sizes**3 - tie_sizes) / 48.0
    z = (w - mean + 0.5) / math.sqrt(var)
    return WilcoxonResult(w, w_plus, n, float(min(1.0, 2.0 * stats.norm.cdf(z))), False, False)

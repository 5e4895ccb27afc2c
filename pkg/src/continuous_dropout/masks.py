"""Dropout mask distributions, their exact moments and seeded sampling.

Every other module obtains masks through :func:`sample_mask` and
:func:`mask_moments`; nothing else draws mask noise directly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import norm

from .errors import MaskParameterError

_MASK64 = (1 << 64) - 1


class MaskKind(str, enum.Enum):
    BERNOULLI = "bernoulli"
    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"


class MomentMode(str, enum.Enum):
    """Which Gaussian moments an analysis uses.

    ``NOMINAL`` takes the pre-clip ``(mu, sigma_sq)`` the closed forms are
    written in; ``EFFECTIVE`` takes the post-clip moments of what actually
    multiplies the input. Bernoulli and uniform masks are identical in both.
    """

    NOMINAL = "nominal"
    EFFECTIVE = "effective"


class MaskMoments(NamedTuple):
    mean: float
    variance: float


@dataclass(frozen=True)
class MaskDistribution:
    """A dropout law: Bernoulli(p), Uniform(0, 1) or Gaussian(mu, sigma_sq).

    Gaussian masks are censored to ``[0, 1]`` unless ``clipped`` is False;
    the unclipped law exists so the closed forms can be checked exactly.
    """

    kind: MaskKind
    p: float = 0.5
    mu: float = 0.5
    sigma_sq: float = 0.0
    clipped: bool = True

    def __post_init__(self):
        if self.kind is MaskKind.BERNOULLI:
            if not (0.0 < self.p < 1.0):
                raise MaskParameterError(f"Bernoulli keep-probability must lie in (0, 1), got {self.p}")
        elif self.kind is MaskKind.GAUSSIAN:
            if not math.isfinite(self.mu):
                raise MaskParameterError(f"Gaussian mean must be finite, got {self.mu}")
            if not (math.isfinite(self.sigma_sq) and self.sigma_sq >= 0.0):
                raise MaskParameterError(f"Gaussian variance must be >= 0, got {self.sigma_sq}")

    @classmethod
    def bernoulli(cls, p: float = 0.5) -> MaskDistribution:
        return cls(MaskKind.BERNOULLI, p=p)

    @classmethod
    def uniform(cls) -> MaskDistribution:
        return cls(MaskKind.UNIFORM)

    @classmethod
    def gaussian(cls, mu: float = 0.5, sigma_sq: float = 0.2, clipped: bool = True) -> MaskDistribution:
        return cls(MaskKind.GAUSSIAN, mu=mu, sigma_sq=sigma_sq, clipped=clipped)

    @property
    def is_deterministic(self) -> bool:
        return self.kind is MaskKind.GAUSSIAN and self.sigma_sq == 0.0

    @property
    def mean(self) -> float:
        return mask_moments(self).mean

    def label(self) -> str:
        return format_spec(self)


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream identified by ``(master_seed, stream_id)``.

    Backed by numpy's Philox generator keyed on both integers, so a stream
    reproduces bit for bit on every platform and distinct ids never share
    state.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def generator(self) -> np.random.Generator:
        key = self.master_seed | (self.stream_id << 64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, index: int) -> RngStream:
        """Child stream ``index``; children of distinct parents do not collide."""
        return RngStream(self.master_seed, _splitmix64(self.stream_id ^ _splitmix64(int(index) + 1)))


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def sample_mask(dist: MaskDistribution, count: int | tuple[int, ...], rng: RngStream) -> np.ndarray:
    """Draw ``count`` mask values (or an array of shape ``count``).

    Equal ``(dist, count, rng)`` always produce bitwise-identical arrays.
    """
    shape = (count,) if isinstance(count, (int, np.integer)) else tuple(count)
    if not shape or any(int(n) < 1 for n in shape):
        raise MaskParameterError(f"mask count must be positive, got {count}")
    gen = rng.generator()
    if dist.kind is MaskKind.BERNOULLI:
        return (gen.random(shape) < dist.p).astype(float)
    if dist.kind is MaskKind.UNIFORM:
        # half-open [0, 1); the endpoint has probability zero
        return gen.random(shape)
    g = dist.mu + math.sqrt(dist.sigma_sq) * gen.standard_normal(shape)
    if dist.clipped:
        # censoring: values beyond the bounds pile up on 0 and 1
        np.clip(g, 0.0, 1.0, out=g)
    return g


def mask_moments(dist: MaskDistribution, mode: MomentMode = MomentMode.EFFECTIVE) -> MaskMoments:
    """Exact mean and variance of a mask value."""
    if dist.kind is MaskKind.BERNOULLI:
        return MaskMoments(dist.p, dist.p * (1.0 - dist.p))
    if dist.kind is MaskKind.UNIFORM:
        return MaskMoments(0.5, 1.0 / 12.0)
    if mode is MomentMode.NOMINAL or not dist.clipped:
        return MaskMoments(dist.mu, dist.sigma_sq)
    return _censored_normal_moments(dist.mu, dist.sigma_sq)


def _censored_normal_moments(mu: float, sigma_sq: float) -> MaskMoments:
    """Moments of ``clip(g, 0, 1)`` for ``g ~ N(mu, sigma_sq)``."""
    if sigma_sq == 0.0:
        return MaskMoments(min(max(mu, 0.0), 1.0), 0.0)
    sigma = math.sqrt(sigma_sq)
    a = (0.0 - mu) / sigma
    b = (1.0 - mu) / sigma
    cdf_a = float(norm.cdf(a))
    tail_b = float(norm.cdf(-b))
    pdf_a = float(norm.pdf(a))
    pdf_b = float(norm.pdf(b))
    # E[clip(g)] = mu + E[(0 - g)+] - E[(g - 1)+]; the two excess terms are
    # evaluated with the same operation order so mu = 1/2 cancels exactly.
    below = (0.0 - mu) * cdf_a + sigma * pdf_a
    above = (mu - 1.0) * tail_b + sigma * pdf_b
    mean = mu + below - above
    inside = 1.0 - cdf_a - tail_b
    second = (
        tail_b
        + (mu * mu + sigma_sq) * inside
        + 2.0 * mu * sigma * (pdf_a - pdf_b)
        + sigma_sq * (a * pdf_a - b * pdf_b)
    )
    return MaskMoments(mean, max(second - mean * mean, 0.0))


_SPEC_KEYS = {
    MaskKind.BERNOULLI: {"p"},
    MaskKind.UNIFORM: set(),
    MaskKind.GAUSSIAN: {"mu", "var", "clip"},
}


def parse_spec(text: str) -> MaskDistribution:
    """Parse ``bernoulli:p=0.5``, ``uniform`` or ``gaussian:mu=0.5,var=0.2``.

    Case-insensitive; unknown keys and malformed values are errors.
    """
    raw = text.strip().lower()
    name, _, params = raw.partition(":")
    try:
        kind = MaskKind(name.strip())
    except ValueError as exc:
        raise MaskParameterError(f"unknown dropout law {name!r} in {text!r}") from exc
    values: dict[str, str] = {}
    for item in filter(None, (part.strip() for part in params.split(","))):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in _SPEC_KEYS[kind]:
            raise MaskParameterError(f"unknown or malformed key {item!r} for {kind.value}")
        values[key] = value.strip()
    try:
        if kind is MaskKind.BERNOULLI:
            return MaskDistribution.bernoulli(float(values.get("p", 0.5)))
        if kind is MaskKind.UNIFORM:
            return MaskDistribution.uniform()
        clip = values.get("clip", "true")
        if clip not in ("true", "false", "1", "0"):
            raise MaskParameterError(f"clip must be true or false, got {clip!r}")
        return MaskDistribution.gaussian(
            mu=float(values.get("mu", 0.5)),
            sigma_sq=float(values.get("var", 0.2)),
            clipped=clip in ("true", "1"),
        )
    except ValueError as exc:
        if isinstance(exc, MaskParameterError):
            raise
        raise MaskParameterError(f"malformed number in {text!r}") from exc


def format_spec(dist: MaskDistribution) -> str:
    """Inverse of :func:`parse_spec`."""
    if dist.kind is MaskKind.BERNOULLI:
        return f"bernoulli:p={dist.p!r}"
    if dist.kind is MaskKind.UNIFORM:
        return "uniform"
    spec = f"gaussian:mu={dist.mu!r},var={dist.sigma_sq!r}"
    return spec if dist.clipped else spec + ",clip=false"

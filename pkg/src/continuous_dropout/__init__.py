"""Continuous Dropout - dropout with uniform and clipped-Gaussian masks."""

__version__ = "0.1.0"

# Expose the mask interface for external use
from .masks import MaskDistribution, RngStream  # noqa: F401

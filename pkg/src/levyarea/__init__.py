"""Weak approximation of Brownian Levy area and its use in SDE simulation."""

from .batch import LevyBatch, num_pairs, pair_indices
from .rng import BridgeSample, RngStream

__version__ = "0.1.0"

__all__ = [
    "LevyBatch",
    "BridgeSample",
    "RngStream",
    "num_pairs",
    "pair_indices",
    "__version__",
]

"""Core data containers and pair-index helpers.

A batch of Levy-area samples is a pair of arrays: Brownian increments
``w`` of shape (n, d) and flattened areas ``a`` of shape (n, d(d-1)/2).
Only the strict upper triangle of the antisymmetric area matrix is
stored, row-major, so for d = 4 the columns are
(0,1), (0,2), (0,3), (1,2), (1,3), (2,3).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def num_pairs(d: int) -> int:
    """Number of stored area components for Brownian dimension d."""
    return d * (d - 1) // 2


def dim_from_pairs(a: int) -> int:
    """Inverse of :func:`num_pairs`; raises if ``a`` is not triangular."""
    d = int(round((1 + np.sqrt(1 + 8 * a)) / 2))
    if num_pairs(d) != a:
        raise ValueError(f"{a} is not d(d-1)/2 for any integer d")
    return d


def pair_indices(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column index arrays (i, j) with i < j, row-major order."""
    iu = np.triu_indices(d, k=1)
    return iu[0], iu[1]


def skew_outer_upper(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Upper triangle of x (x) y - y (x) x for batched vectors.

    Parameters
    ----------
    x, y : (n, d) arrays

    Returns
    -------
    (n, d(d-1)/2) array with entry (i, j) equal to x_i y_j - x_j y_i.
    """
    d = x.shape[-1]
    ii, jj = pair_indices(d)
    return x[..., ii] * y[..., jj] - x[..., jj] * y[..., ii]


def unflatten_area(a_flat: np.ndarray, d: int) -> np.ndarray:
    """Rebuild the full antisymmetric matrix from its flattened triangle."""
    ii, jj = pair_indices(d)
    out_shape = a_flat.shape[:-1] + (d, d)
    m = np.zeros(out_shape, dtype=a_flat.dtype)
    m[..., ii, jj] = a_flat
    m[..., jj, ii] = -a_flat
    return m


def flatten_area(m: np.ndarray) -> np.ndarray:
    """Flattened strict upper triangle of an antisymmetric matrix."""
    d = m.shape[-1]
    ii, jj = pair_indices(d)
    return m[..., ii, jj]


@dataclass
class LevyBatch:
    """Paired (Brownian increment, Levy area) samples at one time scale.

    Attributes
    ----------
    d : Brownian dimension.
    dt : length of the time interval the samples live on.
    w : (n, d) increments, each column N(0, dt) at exactness.
    a : (n, d(d-1)/2) flattened areas, Var = dt^2/4 per column at exactness.
    meta : free-form provenance (sampler kind, seed, depth) carried into
        serialization headers.
    """

    d: int
    dt: float
    w: np.ndarray
    a: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.w.ndim != 2 or self.w.shape[1] != self.d:
            raise ValueError(f"w must have shape (n, {self.d}), got {self.w.shape}")
        a_cols = num_pairs(self.d)
        if self.a.ndim != 2 or self.a.shape != (self.w.shape[0], a_cols):
            raise ValueError(
                f"a must have shape ({self.w.shape[0]}, {a_cols}), got {self.a.shape}"
            )
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.a.shape[1]

    def joint(self) -> np.ndarray:
        """Samples of the joint vector (w, a), shape (n, d + d(d-1)/2)."""
        return np.concatenate([self.w, self.a], axis=1)

    def subsample(self, n: int, rng: np.random.Generator | None = None) -> "LevyBatch":
        """First-n (or random-n when an rng is given) subsample."""
        if n > self.n:
            raise ValueError(f"cannot take {n} of {self.n} samples")
        if rng is None:
            idx = slice(0, n)
            w, a = self.w[idx], self.a[idx]
        else:
            idx = rng.choice(self.n, size=n, replace=False)
            w, a = self.w[idx], self.a[idx]
        return LevyBatch(self.d, self.dt, w, a, dict(self.meta))

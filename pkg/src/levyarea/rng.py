"""Deterministic, stream-splittable random sampling.

Every stochastic routine in the package draws from an :class:`RngStream`,
a thin wrapper around numpy's counter-based Philox generator keyed by
(seed, stream_id). Identical (seed, stream_id) replays an identical
sample sequence; distinct stream_ids give statistically independent
sequences, so batches can be split across derived child streams without
any sequential coupling.

Bounded-support and heavy-tailed draws (logistic, exponential) go
through explicit inverse CDFs so that each output is a fixed function
of one uniform from the stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15

# Mixture weight and constants of the fifth-moment bridge-area residual:
# kept as exact expressions, not floating literals.
FOSTER_XI_UNIFORM_PROB = 21130 / 25621
FOSTER_EXP_RATE = 15 / 8
SQRT3 = np.sqrt(3.0)


def _splitmix64(x: int) -> int:
    """One SplitMix64 finalization round (avalanching 64-bit mixer)."""
    x = (x + _SPLITMIX_GAMMA) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


@dataclass
class RngStream:
    """Immutable (seed, stream_id) descriptor with a lazily-built generator.

    The underlying Philox generator advances as values are drawn; create
    a fresh stream (or a child) whenever an independent, replayable
    sequence is needed. A single stream must not be shared between
    threads.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64
        self.stream_id = int(self.stream_id) & _MASK64
        self._gen: np.random.Generator | None = None

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            key = np.array([self.seed, self.stream_id], dtype=np.uint64)
            self._gen = np.random.Generator(np.random.Philox(key=key))
        return self._gen

    def child(self, k: int) -> "RngStream":
        """Derive the k-th independent sub-stream of this stream."""
        mixed = _splitmix64(self.stream_id ^ _splitmix64(int(k) & _MASK64))
        return RngStream(self.seed, mixed)

    def fresh(self) -> "RngStream":
        """A replayable copy positioned at the start of the sequence."""
        return RngStream(self.seed, self.stream_id)


@dataclass
class BridgeSample:
    """Per-dimension bridge areas of a Brownian path over one interval.

    h : (n, d) time-average of the bridge; N(0, dt/12) per coordinate.
    k : (n, d) second time-iterated bridge area; N(0, dt/720).
    b : (n, d(d-1)/2) space-space bridge area (flattened strict upper
        triangle) or None when a sampler does not produce it.
    """

    h: np.ndarray
    k: np.ndarray
    b: np.ndarray | None = None


def gauss(stream: RngStream, n: int, variance: float, d: int | None = None) -> np.ndarray:
    """i.i.d. mean-zero Gaussians with the given variance.

    Returns shape (n,) or (n, d) when d is given.
    """
    if variance <= 0:
        raise ValueError(f"variance must be positive, got {variance}")
    size = n if d is None else (n, d)
    return np.sqrt(variance) * stream.generator.standard_normal(size)


def rademacher(stream: RngStream, n: int, d: int | None = None) -> np.ndarray:
    """i.i.d. +/-1 values, each sign with probability 1/2."""
    size = n if d is None else (n, d)
    bits = stream.generator.integers(0, 2, size=size)
    return 2.0 * bits - 1.0


def foster_xi(stream: RngStream, n: int) -> np.ndarray:
    """Mixture draw on [-sqrt(3), sqrt(3)]: uniform w.p. 21130/25621, else +/-1.

    Both branches have unit variance, so E[xi^2] = 1 exactly.
    """
    g = stream.generator
    u_branch = g.random(n)
    u_val = g.random(n)
    uniform = SQRT3 * (2.0 * u_val - 1.0)
    sign = np.where(u_val < 0.5, -1.0, 1.0)
    return np.where(u_branch < FOSTER_XI_UNIFORM_PROB, uniform, sign)


def exponential(stream: RngStream, n: int, rate: float, d: int | None = None) -> np.ndarray:
    """Exponential draws by inverse CDF, x = -log(1-u)/rate."""
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    size = n if d is None else (n, d)
    u = stream.generator.random(size)
    return -np.log1p(-u) / rate


def logistic(stream: RngStream, n: int, scale: float, d: int | None = None) -> np.ndarray:
    """Logistic(0, scale) draws by inverse CDF, x = scale * logit(u)."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    size = n if d is None else (n, d)
    u = stream.generator.random(size)
    return scale * (np.log(u) - np.log1p(-u))


def sample_bridge(stream: RngStream, n: int, d: int, dt: float) -> BridgeSample:
    """Bridge areas h ~ N(0, dt/12) and k ~ N(0, dt/720), independent.

    The exact joint law of (h, k) couples them only through higher-order
    structure no consumer here relies on; the two are drawn independently.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    h = gauss(stream, n, dt / 12.0, d)
    k = gauss(stream, n, dt / 720.0, d)
    return BridgeSample(h=h, k=k)


def brownian_increments(stream: RngStream, d: int, n_steps: int, dt: float) -> np.ndarray:
    """Independent increments of a d-dimensional Brownian path, (n_steps, d)."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return gauss(stream, n_steps, dt, d)


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def conditioned_fine_increments(
    stream: RngStream, w: np.ndarray, n_fine: int, dt: float = 1.0
) -> np.ndarray:
    """Fine increments over [0, dt] conditioned to sum exactly to w.

    w may be a single vector (d,) or a batch (n, d). The result has shape
    (..., n_fine, d): each row of increments sums to the corresponding w
    to machine precision, and the law is Brownian motion over [0, dt]
    conditioned on its total increment. n_fine must be a power of two
    (dyadic refinement is what the downstream combine expects).
    """
    if not _is_power_of_two(n_fine):
        raise ValueError(f"n_fine must be a power of two, got {n_fine}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    w = np.asarray(w, dtype=np.float64)
    squeeze = w.ndim == 1
    if squeeze:
        w = w[None, :]
    n, d = w.shape
    g = np.sqrt(dt / n_fine) * stream.generator.standard_normal((n, n_fine, d))
    g -= g.mean(axis=1, keepdims=True)
    out = w[:, None, :] / n_fine + g
    # Pin the sum exactly: spread the float-precision residual evenly.
    out -= (out.sum(axis=1, keepdims=True) - w[:, None, :]) / n_fine
    return out[0] if squeeze else out

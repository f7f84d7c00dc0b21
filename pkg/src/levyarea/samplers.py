"""Weak Levy-area samplers conditional on a Brownian increment.

Four classical constructions plus a high-accuracy reference oracle sit
behind one interface. All samplers return the incoming increments
unchanged and draw areas conditionally on them (for the kinds that
condition at all):

* ``talay``     -- independent scaled signs, +/- dt/2 per pair.
* ``davie``     -- independent N(0, dt^2/4) per pair.
* ``condgauss`` -- Gaussian with the exact conditional mean and variance
  given the increment, via the polynomial expansion
  a_ij = h_i w_j - w_i h_j + g_ij with h ~ N(0, dt/12), g ~ N(0, dt^2/12).
* ``foster``    -- fifth-moment matching construction built from bridge
  areas (h, k), exponential scale factors and a bounded mixture draw.
* ``reference`` -- dyadic refinement: 2^depth conditioned fine
  increments, a foster draw on each fine interval, folded down with the
  concatenation rule. Converges to the true conditional law in W2 at
  rate at least O(2^(-depth/2)) and empirically faster.

The Talay/Davie variance dt^2/4 is the exact unconditional variance of
the area of one pair over an interval of length dt (second derivative
of the analytic characteristic function at zero); a unit test re-derives
it from the closed form rather than trusting this comment.
"""

from __future__ import annotations

import numpy as np

from .batch import LevyBatch, num_pairs, pair_indices, skew_outer_upper
from .chen import tree_combine
from .rng import (
    FOSTER_EXP_RATE,
    BridgeSample,
    RngStream,
    conditioned_fine_increments,
    exponential,
    foster_xi,
    gauss,
    rademacher,
    sample_bridge,
)

SAMPLER_KINDS = ("talay", "davie", "condgauss", "foster", "pairnet", "reference")

# c in the foster scale factor; exact expression, positive (~0.0440).
FOSTER_C = 1.0 / np.sqrt(3.0) - 8.0 / 15.0


def talay_area(stream: RngStream, n: int, d: int, dt: float) -> np.ndarray:
    """Independent signs scaled to +/- dt/2 per pair (variance dt^2/4)."""
    return (dt / 2.0) * rademacher(stream, n, num_pairs(d))


def davie_area(stream: RngStream, n: int, d: int, dt: float) -> np.ndarray:
    """Independent N(0, dt^2/4) per pair, ignoring the increment."""
    return gauss(stream, n, dt * dt / 4.0, num_pairs(d))


def cond_gauss_area(stream: RngStream, w: np.ndarray, dt: float) -> np.ndarray:
    """Gaussian areas with the exact conditional variance given w.

    The residual variance dt^2/12 equals the variance of the space-space
    bridge area (logistic with scale dt/(2*pi)).
    """
    w = np.asarray(w, dtype=np.float64)
    n, d = w.shape
    h = gauss(stream, n, dt / 12.0, d)
    g = gauss(stream, n, dt * dt / 12.0, num_pairs(d))
    return skew_outer_upper(h, w) + g


def foster_area(
    stream: RngStream, w: np.ndarray, dt: float
) -> tuple[np.ndarray, BridgeSample]:
    """Fifth-moment matching sampler; returns the bridge draws as well.

    a_ij = h_i w_j - w_i h_j + 12 (k_i h_j - h_i k_j) + sigma_ij xi_ij
    with sigma_ij^2 = (3/28)(C_i + c)(C_j + c) dt^2
                      + (dt/28)((12 k_i)^2 + (12 k_j)^2),
    C ~ Exp(15/8) i.i.d. per dimension and xi the unit-variance bounded
    mixture. xi_ij and sigma_ij are drawn independently per pair i < j,
    sharing only the per-dimension C and k draws.
    """
    w = np.asarray(w, dtype=np.float64)
    n, d = w.shape
    bridge = sample_bridge(stream, n, d, dt)
    h, k = bridge.h, bridge.k
    c_exp = exponential(stream, n, FOSTER_EXP_RATE, d)
    ii, jj = pair_indices(d)
    k12 = 12.0 * k
    sigma2 = (3.0 / 28.0) * (c_exp[:, ii] + FOSTER_C) * (c_exp[:, jj] + FOSTER_C) * dt * dt
    sigma2 += (dt / 28.0) * (k12[:, ii] ** 2 + k12[:, jj] ** 2)
    xi = foster_xi(stream, n * len(ii)).reshape(n, len(ii))
    a = skew_outer_upper(h, w) + 12.0 * skew_outer_upper(k, h) + np.sqrt(sigma2) * xi
    return a, bridge


def _reference_blocks(stream: RngStream, w: np.ndarray, dt: float, depth: int):
    """Yield (row-slice, fine increments, fine foster areas, fine bridge h)."""
    w = np.asarray(w, dtype=np.float64)
    n, d = w.shape
    n_fine = 2**depth
    dt_fine = dt / n_fine
    # Fixed function of depth so outputs never depend on machine memory.
    block = max(1, 2**20 // n_fine)
    for start in range(0, n, block):
        stop = min(start + block, n)
        m = stop - start
        sub = stream.child(start)
        fine_w = conditioned_fine_increments(sub, w[start:stop], n_fine, dt)
        flat_w = fine_w.reshape(m * n_fine, d)
        fine_a, bridge = foster_area(sub, flat_w, dt_fine)
        yield (
            slice(start, stop),
            fine_w,
            fine_a.reshape(m, n_fine, -1),
            bridge.h.reshape(m, n_fine, d),
        )


def reference_area(stream: RngStream, w: np.ndarray, dt: float, depth: int = 10) -> np.ndarray:
    """High-accuracy conditional sampler by dyadic refinement."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if depth == 0:
        return foster_area(stream, w, dt)[0]
    w = np.asarray(w, dtype=np.float64)
    out = np.empty((w.shape[0], num_pairs(w.shape[1])))
    for rows, fine_w, fine_a, _ in _reference_blocks(stream, w, dt, depth):
        _, a = tree_combine(fine_w, fine_a)
        out[rows] = a
    return out


def reference_area_with_h(
    stream: RngStream, w: np.ndarray, dt: float, depth: int = 10
) -> tuple[np.ndarray, np.ndarray]:
    """Refinement oracle that also reports the bridge average h of [0, dt].

    h of the union interval is an exact linear functional of the fine
    (increment, h) pairs: tracking I = integral of the path relative to
    the segment start, segments of lengths (t1, t2) concatenate as
    I = I1 + t2 w1 + I2 with I = t (h + w/2) per segment.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    w = np.asarray(w, dtype=np.float64)
    n, d = w.shape
    if depth == 0:
        a, bridge = foster_area(stream, w, dt)
        return a, bridge.h
    n_fine = 2**depth
    dt_fine = dt / n_fine
    out_a = np.empty((n, num_pairs(d)))
    out_h = np.empty((n, d))
    for rows, fine_w, fine_a, fine_h in _reference_blocks(stream, w, dt, depth):
        _, a = tree_combine(fine_w, fine_a)
        seg_len = dt_fine
        w_run = fine_w
        i_run = seg_len * (fine_h + 0.5 * fine_w)
        while w_run.shape[1] > 1:
            i_run = i_run[:, 0::2] + seg_len * w_run[:, 0::2] + i_run[:, 1::2]
            w_run = w_run[:, 0::2] + w_run[:, 1::2]
            seg_len *= 2.0
        out_a[rows] = a
        out_h[rows] = i_run[:, 0] / dt - 0.5 * w_run[:, 0]
    return out_a, out_h


class AreaSampler:
    """Common interface: draw areas conditional on given increments."""

    name = "base"

    def areas(self, stream: RngStream, w: np.ndarray, dt: float) -> np.ndarray:
        raise NotImplementedError

    def sample(self, stream: RngStream, w: np.ndarray, dt: float) -> LevyBatch:
        w = np.asarray(w, dtype=np.float64)
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        a = self.areas(stream, w, dt)
        return LevyBatch(w.shape[1], dt, w, a, {"kind": self.name})


class TalaySampler(AreaSampler):
    name = "talay"

    def areas(self, stream, w, dt):
        return talay_area(stream, w.shape[0], w.shape[1], dt)


class DavieSampler(AreaSampler):
    name = "davie"

    def areas(self, stream, w, dt):
        return davie_area(stream, w.shape[0], w.shape[1], dt)


class CondGaussSampler(AreaSampler):
    name = "condgauss"

    def areas(self, stream, w, dt):
        return cond_gauss_area(stream, w, dt)


class FosterSampler(AreaSampler):
    name = "foster"

    def areas(self, stream, w, dt):
        return foster_area(stream, w, dt)[0]


class ReferenceSampler(AreaSampler):
    name = "reference"

    def __init__(self, depth: int = 10):
        self.depth = depth

    def areas(self, stream, w, dt):
        return reference_area(stream, w, dt, self.depth)

    def sample(self, stream, w, dt):
        batch = super().sample(stream, w, dt)
        batch.meta["depth"] = self.depth
        return batch


def make_sampler(kind: str, model=None, depth: int = 10) -> AreaSampler:
    """Build a sampler by name; pairnet needs a loaded generator model."""
    kind = kind.lower()
    if kind == "talay":
        return TalaySampler()
    if kind == "davie":
        return DavieSampler()
    if kind == "condgauss":
        return CondGaussSampler()
    if kind == "foster":
        return FosterSampler()
    if kind == "reference":
        return ReferenceSampler(depth)
    if kind == "pairnet":
        if model is None:
            raise ValueError("pairnet sampler requires a loaded generator model")
        from .pairnet import PairNetSampler

        return PairNetSampler(model)
    raise ValueError(f"unknown sampler kind {kind!r}; choose from {SAMPLER_KINDS}")


def sample_area(kind, stream: RngStream, w: np.ndarray, dt: float, **kw) -> LevyBatch:
    """Dispatch: (w, dt) plus a kind name or sampler instance -> LevyBatch."""
    sampler = kind if isinstance(kind, AreaSampler) else make_sampler(kind, **kw)
    return sampler.sample(stream, w, dt)

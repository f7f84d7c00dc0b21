"""Concatenation of increments and areas over adjacent intervals.

The concatenation rule carries a bilinear correction: joining segments
(w1, a1) and (w2, a2) gives increment w1 + w2 and area
a1 + a2 + (w1 (x) w2 - w2 (x) w1)/2. The true joint law at unit scale is
the unique fixed point of the batch "combine" operator built from this
rule, which is what both the refinement oracle and the data-free
training loop exploit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .batch import LevyBatch, skew_outer_upper

SQRT2 = np.sqrt(2.0)


def chen_relation(
    w1: np.ndarray, a1: np.ndarray, w2: np.ndarray, a2: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate two adjacent segments; no rescaling is applied.

    All arguments broadcast over leading axes; w* have d columns and a*
    have d(d-1)/2 columns. The caller owns time bookkeeping: the output
    lives on the union of the two input intervals.
    """
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    a1 = np.asarray(a1, dtype=np.float64)
    a2 = np.asarray(a2, dtype=np.float64)
    if w1.shape[-1] != w2.shape[-1] or a1.shape[-1] != a2.shape[-1]:
        raise ValueError("segment dimensions do not match")
    w = w1 + w2
    a = a1 + a2 + 0.5 * skew_outer_upper(w1, w2)
    return w, a


def chen_combine(batch: LevyBatch) -> LevyBatch:
    """Halve a batch by combining first-half/second-half sample pairs.

    Each half is first rescaled (w by 1/sqrt(2), a by 1/2) so that it
    represents the same nominal time scale dt over half the interval;
    the output batch again lives at dt. Output w columns stay N(0, dt)
    exactly in law; the true joint law is invariant.
    """
    if batch.n % 2 != 0:
        raise ValueError(f"batch size must be even, got {batch.n}")
    half = batch.n // 2
    w1 = batch.w[:half] / SQRT2
    w2 = batch.w[half:] / SQRT2
    a1 = batch.a[:half] / 2.0
    a2 = batch.a[half:] / 2.0
    w, a = chen_relation(w1, a1, w2, a2)
    meta = dict(batch.meta)
    meta["combines"] = meta.get("combines", 0) + 1
    return LevyBatch(batch.d, batch.dt, w, a, meta)


def tree_combine(w_fine: np.ndarray, a_fine: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fold (n, 2^K, d) increments and (n, 2^K, a') areas down to one segment.

    Adjacent segments are concatenated pairwise K times. Inputs live at
    their physical scale (no rescaling happens here). Returns (n, d) and
    (n, a') arrays for the union interval.
    """
    w, a = w_fine, a_fine
    while w.shape[1] > 1:
        w_l, w_r = w[:, 0::2], w[:, 1::2]
        a_l, a_r = a[:, 0::2], a[:, 1::2]
        w, a = chen_relation(w_l, a_l, w_r, a_r)
    return w[:, 0], a[:, 0]


def chen_refine(stream, n_out: int, d: int, dt: float, depth: int, base) -> LevyBatch:
    """Per-sample dyadic refinement of a base sampler.

    Each output sample is the concatenation of 2^depth independent base
    samples drawn at scale dt/2^depth, so the cost per output sample is
    2^depth while the output size stays n_out. depth = 0 returns plain
    base samples. ``base`` is any object with
    ``sample(stream, w, dt) -> LevyBatch`` plus unconditional increment
    draws, i.e. an AreaSampler from the samplers module.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    from .rng import gauss  # local import keeps module deps one-way

    n_fine = 2**depth
    dt_fine = dt / n_fine
    # Block over output samples so memory stays bounded at deep levels.
    # The block size is a fixed function of depth, so results do not
    # depend on machine memory.
    block = max(1, 2**20 // n_fine)
    w_parts, a_parts = [], []
    for start in range(0, n_out, block):
        m = min(block, n_out - start)
        sub = stream.child(start)
        w_fine = gauss(sub, m * n_fine, dt_fine, d)
        fine = base.sample(sub, w_fine, dt_fine)
        w_tree = fine.w.reshape(m, n_fine, d)
        a_tree = fine.a.reshape(m, n_fine, -1)
        w, a = tree_combine(w_tree, a_tree)
        w_parts.append(w)
        a_parts.append(a)
    w = np.concatenate(w_parts, axis=0)
    a = np.concatenate(a_parts, axis=0)
    meta = {"kind": f"refined-{base.name}", "depth": depth}
    return LevyBatch(d, dt, w, a, meta)


@dataclass
class ChenStudyReport:
    """Decay of the combined-batch error against a reference batch.

    levels holds (log2 sample count, combines applied, W2 to reference,
    same-law W2 baseline at that sample count); fitted_slope is the
    least-squares slope of log2 W2 against the number of combines over
    the pre-floor levels.
    """

    levels: list = field(default_factory=list)
    fitted_slope: float = float("nan")
    used_levels: int = 0

    def rows(self):
        return [
            {"combines": c, "log2_n": ln, "w2": w, "baseline": b}
            for (ln, c, w, b) in self.levels
        ]


def chen_study(
    stream,
    reference: LevyBatch,
    d: int = 2,
    n_start: int = 2**20,
    start_variance: float | None = None,
    min_samples: int = 512,
    floor_factor: float = 3.0,
) -> ChenStudyReport:
    """Iterated-halving convergence experiment.

    Starts from n_start samples whose areas are plain Gaussians with
    variance ``start_variance`` (defaults to the exact dt^2/4 at dt = 1)
    independent of the increments, applies the combine until fewer than
    ``min_samples`` remain, and records the mean marginal W2 distance to
    the reference batch at each level. Levels whose W2 sits within
    ``floor_factor`` times the same-law estimation baseline are excluded
    from the slope fit.
    """
    from .metrics import marginal_w2, w2_baseline
    from .rng import gauss

    if start_variance is None:
        start_variance = 0.25
    from .batch import num_pairs

    w = gauss(stream, n_start, 1.0, d)
    a = gauss(stream, n_start, start_variance, num_pairs(d))
    batch = LevyBatch(d, 1.0, w, a, {"kind": "gaussian-start"})

    report = ChenStudyReport()
    combines = 0
    while batch.n >= min_samples:
        w2 = marginal_w2(batch, reference)
        base = w2_baseline(reference, batch.n, stream.child(10_000 + combines))
        report.levels.append((int(np.log2(batch.n)), combines, w2, base))
        if batch.n // 2 < min_samples:
            break
        batch = chen_combine(batch)
        combines += 1

    usable = [(c, w2) for (_, c, w2, base) in report.levels if w2 > floor_factor * base]
    if len(usable) >= 3:
        xs = np.array([c for c, _ in usable], dtype=float)
        ys = np.log2([w2 for _, w2 in usable])
        slope = np.polyfit(xs, ys, 1)[0]
        report.fitted_slope = float(slope)
        report.used_levels = len(usable)
    return report

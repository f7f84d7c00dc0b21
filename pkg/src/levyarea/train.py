"""Data-free adversarial training of the pair-net generator.

Each step draws a fresh batch of increments, generates areas, combines
the two halves of the batch with the concatenation rule, and measures
the degree-1 characteristic-function distance between the generated
batch and its combined half at M learnable frequency vectors. The
frequencies ascend the distance, the generator descends it; the true
joint law is the unique fixed point the combine leaves invariant, so no
external samples of the target enter the loop anywhere.

Gradients flow through both the generated branch and the combined
branch (the combine is a differentiable function of generator outputs);
a stop-gradient-on-combine variant stays behind a flag for ablation.
Sign flips are resampled per batch row and treated as constants in
backprop.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .batch import LevyBatch, num_pairs, pair_indices, skew_outer_upper
from .pairnet import (
    GeneratorModel,
    bridge_flip,
    init_model,
    pairnet_b,
    pairnet_b_backward,
)
from .rng import RngStream, gauss, rademacher

SQRT2 = np.sqrt(2.0)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    """Knobs of the adversarial loop; defaults follow the shipped setup."""

    d: int = 4
    noise_dim: int = 4
    hidden: tuple = (16, 16, 16)
    slope: float = 0.01
    batch_size: int = 1024          # generated per step; the combine halves it
    n_freqs: int = 64               # learnable frequency vectors M
    iter_d: int = 2                 # discriminator ascents per generator step
    lr_gen: float = 2e-3
    lr_disc: float = 8e-3
    final_lr_fraction: float = 0.1  # linear decay floor for both rates
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 12000              # generator steps
    seed: int = 0
    eval_every: int = 500
    eval_n: int = 1 << 16
    loss_power: int = 1             # 1: mean |delta|; 2: mean |delta|^2
    chen_stop_gradient: bool = False
    h_variance: float = 1.0 / 12.0  # bridge-average variance at unit scale

    def __post_init__(self):
        if self.batch_size % 2 != 0:
            raise ValueError("batch_size must be even (the combine needs pairs)")
        if self.lr_gen <= 0 or self.lr_disc <= 0:
            raise ValueError("learning rates must be positive")
        if self.loss_power not in (1, 2):
            raise ValueError("loss_power must be 1 or 2")


@dataclass
class TrainReport:
    """Loss curve, periodic held-out metrics, and the selection outcome."""

    loss_curve: list = field(default_factory=list)
    eval_history: list = field(default_factory=list)
    best_step: int = -1
    best_eval_w2: float = float("inf")
    steps: int = 0
    wall_clock_seconds: float = 0.0
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["loss_curve"] = [[int(s), float(v)] for s, v in self.loss_curve]
        return doc


class Adam:
    """Standard first/second-moment update with bias correction."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


def adam_step(params, grads, state: Adam, lr=None):
    """Functional wrapper over :class:`Adam` for single updates."""
    state.step(params, grads, lr)
    return params, state


@dataclass
class TrainDraw:
    """One batch of training randomness, fixed independently of parameters."""

    w: np.ndarray
    xi0: np.ndarray
    xi: np.ndarray
    h: np.ndarray
    z: np.ndarray


def draw_training_batch(stream: RngStream, cfg: TrainConfig) -> TrainDraw:
    n, d = cfg.batch_size, cfg.d
    w = gauss(stream, n, 1.0, d)
    xi0 = rademacher(stream, n)
    xi = rademacher(stream, n, d)
    h = gauss(stream, n, cfg.h_variance, d)
    z = gauss(stream, n * d, 1.0, cfg.noise_dim).reshape(n, d, cfg.noise_dim)
    return TrainDraw(w=w, xi0=xi0, xi=xi, h=h, z=z)


def chen_loss(
    model: GeneratorModel,
    freqs: np.ndarray,
    draw: TrainDraw,
    cfg: TrainConfig,
    want_gen_grads: bool = False,
    want_disc_grads: bool = False,
):
    """Loss and requested gradients for one fixed batch of randomness.

    Returns (loss, gen_grads or None, disc_grad or None) where gen_grads
    matches model.parameters() and disc_grad matches freqs. The combined
    branch enters with its exact linear/bilinear coefficients, so the
    generator gradient covers both occurrences of every area sample.
    """
    n = draw.w.shape[0]
    half = n // 2
    d = cfg.d
    m_freqs = freqs.shape[0]

    need_cache = want_gen_grads
    if need_cache:
        b, cache = pairnet_b(model, draw.h, draw.z, want_cache=True)
    else:
        b = pairnet_b(model, draw.h, draw.z)
    a = bridge_flip(draw.w, draw.h, b, draw.xi0, draw.xi)

    w1, w2 = draw.w[:half], draw.w[half:]
    a1, a2 = a[:half], a[half:]
    wc = (w1 + w2) / SQRT2
    ac = 0.5 * (a1 + a2) + 0.25 * skew_outer_upper(w1, w2)

    x = np.concatenate([draw.w, a], axis=1)
    y = np.concatenate([wc, ac], axis=1)
    ex = np.exp(1j * (x @ freqs.T))
    ey = np.exp(1j * (y @ freqs.T))
    delta = ex.mean(axis=0) - ey.mean(axis=0)
    mod = np.abs(delta)
    if cfg.loss_power == 1:
        loss = float(mod.mean())
        u = delta / np.maximum(mod, 1e-300) / m_freqs
    else:
        loss = float((mod**2).mean())
        u = 2.0 * delta / m_freqs

    gen_grads = None
    disc_grad = None
    if want_gen_grads or want_disc_grads:
        # d loss / d Re(delta_m), d Im(delta_m) packaged as Re[conj(u) d delta].
        iu = 1j * np.conj(u)
        gx = np.real(ex * iu[None, :])
        gy = np.real(ey * iu[None, :])

    if want_gen_grads:
        dx = (gx @ freqs) / n
        da = dx[:, d:]
        if not cfg.chen_stop_gradient:
            dy = -(gy @ freqs) / half
            da_c = 0.5 * dy[:, d:]
            da = da.copy()
            da[:half] += da_c
            da[half:] += da_c
        ii, jj = pair_indices(d)
        flip_factor = draw.xi0[:, None] * draw.xi[:, ii] * draw.xi[:, jj]
        db = da * flip_factor
        dws, dbs = pairnet_b_backward(model, cache, db)
        gen_grads = []
        for wgrad, bgrad in zip(dws, dbs):
            gen_grads.extend([wgrad, bgrad])

    if want_disc_grads:
        disc_grad = (gx.T @ x) / n - (gy.T @ y) / half

    return loss, gen_grads, disc_grad


def quick_eval(model: GeneratorModel, eval_reference: LevyBatch, cfg: TrainConfig,
               eval_seed: int = 977) -> dict:
    """Held-out metrics with a fixed seed (fresh stream each call)."""
    from .metrics import fourth_moment_metric, marginal_w2
    from .pairnet import generate

    stream = RngStream(eval_seed)
    n = min(cfg.eval_n, eval_reference.n)
    w = gauss(stream, n, 1.0, cfg.d)
    batch = generate(model, stream, w, 1.0)
    w2 = marginal_w2(batch, eval_reference)
    try:
        fm = fourth_moment_metric(batch, cfg.d, ref_batch=eval_reference)
    except ValueError:
        fm = float("nan")
    return {"marginal_w2": w2, "fourth_moment": fm}


def train(
    cfg: TrainConfig,
    eval_reference: LevyBatch | None = None,
    log=None,
) -> tuple[GeneratorModel, TrainReport]:
    """Alternating ascent/descent with Adam on both sides.

    The loop consumes only RNG streams; the reference batch (when given)
    is used purely for periodic held-out evaluation and best-checkpoint
    selection, never inside the loss. Deterministic given cfg.seed in
    single-threaded mode.
    """
    t_start = time.perf_counter()
    root = RngStream(cfg.seed)
    model = init_model(root.child(0), d=cfg.d, noise_dim=cfg.noise_dim,
                       hidden=tuple(cfg.hidden), slope=cfg.slope)
    dim = cfg.d + num_pairs(cfg.d)
    freqs = gauss(root.child(1), cfg.n_freqs, 1.0, dim)
    data_stream = root.child(2)

    params = model.parameters()
    opt_g = Adam(params, cfg.lr_gen, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    opt_d = Adam([freqs], cfg.lr_disc, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    report = TrainReport(config=asdict(cfg))
    best_model = model.copy()
    best_w2 = float("inf")
    best_step = -1

    for step in range(1, cfg.steps + 1):
        frac = step / cfg.steps
        decay = 1.0 + (cfg.final_lr_fraction - 1.0) * frac
        for _ in range(cfg.iter_d):
            draw = draw_training_batch(data_stream, cfg)
            loss, _, dfreq = chen_loss(model, freqs, draw, cfg, want_disc_grads=True)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {step}")
            opt_d.step([freqs], [-dfreq], lr=cfg.lr_disc * decay)
        draw = draw_training_batch(data_stream, cfg)
        loss, ggrads, _ = chen_loss(model, freqs, draw, cfg, want_gen_grads=True)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        opt_g.step(params, ggrads, lr=cfg.lr_gen * decay)

        if step % 50 == 0 or step == 1:
            report.loss_curve.append((step, loss))
        if eval_reference is not None and (step % cfg.eval_every == 0 or step == cfg.steps):
            metrics = quick_eval(model, eval_reference, cfg)
            metrics["step"] = step
            report.eval_history.append(metrics)
            if metrics["marginal_w2"] < best_w2:
                best_w2 = metrics["marginal_w2"]
                best_step = step
                best_model = model.copy()
            if log is not None:
                log(f"step {step}: loss {loss:.5f} eval_w2 {metrics['marginal_w2']:.6f}")

    if eval_reference is None:
        best_model = model.copy()
        best_step = cfg.steps
    report.best_step = best_step
    report.best_eval_w2 = best_w2 if np.isfinite(best_w2) else float("nan")
    report.steps = cfg.steps
    report.wall_clock_seconds = time.perf_counter() - t_start
    return best_model, report

"""Pair-wired feed-forward generator of space-space bridge areas.

One small shared MLP maps a pair of per-dimension inputs
(h_i, z_i), (h_j, z_j) to the scalar bridge-area estimate b_ij, so the
area component for pair (i, j) can never see coordinate k outside the
pair. On top of the network sits the sign-flipping map

    BF(w, h, b, xi0, xi)_{ij} = xi0 * (xi_i h_i w_j - w_i xi_j h_j
                                        + xi_i xi_j b_ij),

a law-preserving symmetry of the target that makes odd moments of the
output vanish. Inference only lives here; the training loop is in
:mod:`levyarea.train`.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .batch import LevyBatch, num_pairs, pair_indices
from .rng import RngStream, gauss, rademacher

CHECKPOINT_MAGIC = b"LVGEN001"
CHECKPOINT_VERSION = 1


@dataclass
class GeneratorModel:
    """MLP weights plus the architecture metadata needed to rebuild it.

    widths is the full layer-size list [2*(1+noise_dim), h1, ..., 1];
    weights[k] has shape (widths[k], widths[k+1]).
    """

    d: int
    noise_dim: int
    widths: list
    slope: float
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    version: int = CHECKPOINT_VERSION

    def __post_init__(self):
        if self.widths[0] != 2 * (1 + self.noise_dim):
            raise ValueError(
                f"input width must be 2*(1+noise_dim)={2 * (1 + self.noise_dim)}, "
                f"got {self.widths[0]}"
            )
        if self.widths[-1] != 1:
            raise ValueError("output width must be 1")
        for arr in self.weights + self.biases:
            if not np.all(np.isfinite(arr)):
                raise ValueError("model contains non-finite weights")

    @property
    def in_width(self) -> int:
        return self.widths[0]

    def copy(self) -> "GeneratorModel":
        return GeneratorModel(
            d=self.d,
            noise_dim=self.noise_dim,
            widths=list(self.widths),
            slope=self.slope,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            version=self.version,
        )

    def parameters(self):
        """Flat list of parameter arrays (weights then biases, per layer)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


def init_model(
    stream: RngStream,
    d: int = 4,
    noise_dim: int = 4,
    hidden=(16, 16, 16),
    slope: float = 0.01,
) -> GeneratorModel:
    """He-style random initialization for the leaky-ReLU stack."""
    widths = [2 * (1 + noise_dim), *hidden, 1]
    g = stream.generator
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        std = np.sqrt(2.0 / ((1.0 + slope * slope) * fan_in))
        weights.append(std * g.standard_normal((fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return GeneratorModel(d=d, noise_dim=noise_dim, widths=widths, slope=slope,
                          weights=weights, biases=biases)


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def mlp_forward(model: GeneratorModel, x: np.ndarray, want_cache: bool = False):
    """Affine stack with leaky-ReLU between hidden layers, linear output.

    Returns (batch, 1) output, plus the per-layer inputs/pre-activations
    when want_cache is set (consumed by :func:`mlp_backward`).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.in_width:
        raise ValueError(f"input width {x.shape[-1]} != model width {model.in_width}")
    cache = {"inputs": [], "pres": []} if want_cache else None
    h = x
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        if want_cache:
            cache["inputs"].append(h)
        pre = h @ w + b
        if k < last:
            if want_cache:
                cache["pres"].append(pre)
            h = leaky_relu(pre, model.slope)
        else:
            h = pre
    return (h, cache) if want_cache else h


def mlp_backward(model: GeneratorModel, cache, dy: np.ndarray):
    """Backpropagate dLoss/doutput; returns (dx, dweights, dbiases)."""
    dws = [None] * len(model.weights)
    dbs = [None] * len(model.biases)
    grad = np.asarray(dy, dtype=np.float64)
    last = len(model.weights) - 1
    for k in range(last, -1, -1):
        x_in = cache["inputs"][k]
        dws[k] = x_in.T @ grad
        dbs[k] = grad.sum(axis=0)
        grad = grad @ model.weights[k].T
        if k > 0:
            pre = cache["pres"][k - 1]
            grad = grad * np.where(pre >= 0, 1.0, model.slope)
    return grad, dws, dbs


def pair_input(h: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Assemble the (n * n_pairs, 2(1+noise)) network input for all pairs.

    Row layout per pair (i, j): [h_i, z_i, h_j, z_j]; pairs vary fastest.
    """
    n, d = h.shape
    nz = z.shape[-1]
    ii, jj = pair_indices(d)
    left = np.concatenate([h[:, ii, None], z[:, ii, :]], axis=2)
    right = np.concatenate([h[:, jj, None], z[:, jj, :]], axis=2)
    x = np.concatenate([left, right], axis=2)
    return x.reshape(n * len(ii), 2 * (1 + nz))


def pairnet_b(model: GeneratorModel, h: np.ndarray, z: np.ndarray,
              want_cache: bool = False):
    """Evaluate the shared net once per ordered pair i < j, batched.

    h: (n, d), z: (n, d, noise_dim) -> (n, d(d-1)/2). The output for pair
    (i, j) depends only on coordinates i and j of (h, z); that wiring is
    this module's defining invariant and is perturbation-tested.
    """
    n, d = h.shape
    x = pair_input(h, z)
    if want_cache:
        y, cache = mlp_forward(model, x, want_cache=True)
        return y.reshape(n, num_pairs(d)), cache
    return mlp_forward(model, x).reshape(n, num_pairs(d))


def pairnet_b_backward(model: GeneratorModel, cache, db: np.ndarray):
    """Gradients of all network parameters from dLoss/db, shape (n, a')."""
    dy = db.reshape(-1, 1)
    _, dws, dbs = mlp_backward(model, cache, dy)
    return dws, dbs


def bridge_flip(
    w: np.ndarray, h: np.ndarray, b: np.ndarray, xi0: np.ndarray, xi: np.ndarray
) -> np.ndarray:
    """Sign-flipped polynomial assembly of areas; upper triangle only."""
    d = w.shape[-1]
    ii, jj = pair_indices(d)
    hx = xi * h
    term = hx[..., ii] * w[..., jj] - w[..., ii] * hx[..., jj]
    term = term + xi[..., ii] * xi[..., jj] * b
    x0 = np.asarray(xi0)
    return x0[..., None] * term


def generate(
    model: GeneratorModel,
    stream: RngStream,
    w: np.ndarray,
    dt: float,
    apply_flips: bool = True,
) -> LevyBatch:
    """Draw areas conditional on increments w at time scale dt.

    All randomness (flips, bridge h, latent noise) comes from the given
    stream; work happens at unit scale on w/sqrt(dt) and is mapped back
    by a = dt * a_unit, so scaling is exact rather than statistical.
    apply_flips=False skips the sign symmetrization (the raw polynomial
    assembly with xi0 = xi = 1), kept selectable for ablation.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    w = np.asarray(w, dtype=np.float64)
    n, d = w.shape
    if d > model.d:
        warnings.warn(
            f"sampling d'={d} above the model's training dimension {model.d}; "
            "quality may degrade",
            stacklevel=2,
        )
    w_unit = w / np.sqrt(dt)
    xi0 = rademacher(stream, n)
    xi = rademacher(stream, n, d)
    if not apply_flips:
        xi0 = np.ones(n)
        xi = np.ones((n, d))
    h = gauss(stream, n, 1.0 / 12.0, d)
    z = gauss(stream, n * d, 1.0, model.noise_dim).reshape(n, d, model.noise_dim)
    b = pairnet_b(model, h, z)
    a_unit = bridge_flip(w_unit, h, b, xi0, xi)
    return LevyBatch(d, dt, w, dt * a_unit, {"kind": "pairnet"})


def all_flip_patterns(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Enumerate all 2^(d+1) values of (xi0, xi); rows of signs."""
    m = 2 ** (d + 1)
    bits = ((np.arange(m)[:, None] >> np.arange(d + 1)[None, :]) & 1).astype(np.float64)
    signs = 2.0 * bits - 1.0
    return signs[:, 0], signs[:, 1:]


def exhaustive_areas(
    model: GeneratorModel,
    w: np.ndarray,
    h: np.ndarray,
    z: np.ndarray,
    include_reflection: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic sign-exhausted output set for fixed (w, h, z).

    Expands each input sample over all 2^(d+1) flip patterns and, when
    include_reflection is set, additionally pairs every row (w, a) with
    its reflection (-w, -a) (the increment-and-area sign symmetry of the
    joint law). On the completed set every odd-total-degree monomial in
    (w, a) averages to exactly zero; without the reflection this holds
    for monomials of odd total degree in the areas alone.
    """
    n, d = w.shape
    b = pairnet_b(model, h, z)
    xi0s, xis = all_flip_patterns(d)
    w_rows, a_rows = [], []
    for xi0, xi in zip(xi0s, xis):
        a = bridge_flip(w, h, b, np.full(n, xi0), np.tile(xi, (n, 1)))
        w_rows.append(w)
        a_rows.append(a)
        if include_reflection:
            w_rows.append(-w)
            a_rows.append(-a)
    return np.concatenate(w_rows, axis=0), np.concatenate(a_rows, axis=0)


class PairNetSampler:
    """Area sampler backed by a trained generator checkpoint."""

    name = "pairnet"

    def __init__(self, model: GeneratorModel):
        self.model = model

    def areas(self, stream: RngStream, w: np.ndarray, dt: float) -> np.ndarray:
        return generate(self.model, stream, w, dt).a

    def sample(self, stream: RngStream, w: np.ndarray, dt: float) -> LevyBatch:
        return generate(self.model, stream, w, dt)


def _header_dict(model: GeneratorModel) -> dict:
    names = []
    for k in range(len(model.weights)):
        names.append({"name": f"w{k}", "shape": list(model.weights[k].shape)})
        names.append({"name": f"b{k}", "shape": list(model.biases[k].shape)})
    return {
        "format": "pairnet-checkpoint",
        "version": model.version,
        "d": model.d,
        "noise_dim": model.noise_dim,
        "widths": list(model.widths),
        "slope": model.slope,
        "arrays": names,
    }


def save(model: GeneratorModel, path) -> None:
    """Versioned binary checkpoint: header JSON + little-endian float64 blobs."""
    header = json.dumps(_header_dict(model), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


class CheckpointError(ValueError):
    """Raised for corrupt, truncated or version-mismatched checkpoints."""


def load(path) -> GeneratorModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r} in {path}")
        raw = fh.read(4)
        if len(raw) < 4:
            raise CheckpointError(f"truncated header in {path}")
        (hlen,) = struct.unpack("<I", raw)
        hraw = fh.read(hlen)
        if len(hraw) < hlen:
            raise CheckpointError(f"truncated header in {path}")
        header = json.loads(hraw.decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint version {header.get('version')} not supported"
            )
        weights, biases = [], []
        for spec in header["arrays"]:
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            blob = fh.read(8 * count)
            if len(blob) < 8 * count:
                raise CheckpointError(f"truncated array {spec['name']} in {path}")
            arr = np.frombuffer(blob, dtype="<f8").reshape(spec["shape"]).copy()
            if spec["name"].startswith("w"):
                weights.append(arr)
            else:
                biases.append(arr)
    return GeneratorModel(
        d=header["d"],
        noise_dim=header["noise_dim"],
        widths=header["widths"],
        slope=header["slope"],
        weights=weights,
        biases=biases,
        version=header["version"],
    )


def save_json(model: GeneratorModel, path) -> None:
    """Plain-text mirror of the checkpoint for debugging."""
    doc = _header_dict(model)
    doc["values"] = {}
    for k in range(len(model.weights)):
        doc["values"][f"w{k}"] = model.weights[k].tolist()
        doc["values"][f"b{k}"] = model.biases[k].tolist()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)

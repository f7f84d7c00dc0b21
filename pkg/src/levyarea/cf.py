"""Analytic and empirical characteristic functions of (increment, area).

The joint characteristic function of a d-dimensional Brownian increment
and its Levy area at time t has a closed form built from the canonical
decomposition of the antisymmetric frequency matrix L:

    L = R^T S R,   S = blockdiag([[0, -eta_i], [eta_i, 0]], ..., 0)

with R orthogonal and eta_1 >= ... >= eta_{d1} > 0. Writing m' = R mu,

    CF(t, mu, L) = prod_i sech(eta_i t / 2)
                   * exp( - sum_i (m'_{2i-1}^2 + m'_{2i}^2) tanh(eta_i t/2)/eta_i
                          - (t/2) * sum_{zero block} m'_k^2 ).

The value is real and lies in (0, 1]. Degenerate eta -> 0 is handled by
the limit tanh(eta t/2)/eta -> t/2.

Empirical counterparts: the plain empirical CF (degree 1) and, at Lie
degree n > 1, the empirical average of unitary matrix exponentials of
linear anti-Hermitian embeddings, compared via the Hilbert-Schmidt norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .batch import LevyBatch, num_pairs, unflatten_area
from .rng import RngStream

_ETA_SMALL = 1e-6
_RANK_TOL = 1e-12


@dataclass
class AntisymDecomposition:
    """Canonical form of a real antisymmetric matrix.

    r is orthogonal with lam = r.T @ sigma @ r; eta holds the d1 positive
    rotation rates sorted descending; d0 = d - 2*d1 zero modes.
    """

    r: np.ndarray
    eta: np.ndarray
    d0: int

    @property
    def d1(self) -> int:
        return len(self.eta)

    def sigma(self) -> np.ndarray:
        d = self.r.shape[0]
        s = np.zeros((d, d))
        for i, e in enumerate(self.eta):
            s[2 * i, 2 * i + 1] = -e
            s[2 * i + 1, 2 * i] = e
        return s


def antisym_decompose(lambda_flat: np.ndarray, d: int | None = None) -> AntisymDecomposition:
    """Decompose the antisymmetric matrix built from a flattened triangle.

    Implemented through the Hermitian eigendecomposition of i*L: each
    eigenvector v for eigenvalue eta > 0 is isotropic (v^T v = 0), so its
    normalized real and imaginary parts form an orthonormal 2-plane on
    which L rotates at rate eta. Eigenvalues below 1e-12 * ||L|| count as
    zero modes, whose real basis comes from the null space.
    """
    lambda_flat = np.asarray(lambda_flat, dtype=np.float64)
    if not np.all(np.isfinite(lambda_flat)):
        raise ValueError("frequency matrix contains non-finite entries")
    if d is None:
        from .batch import dim_from_pairs

        d = dim_from_pairs(lambda_flat.shape[-1])
    lam = unflatten_area(lambda_flat, d)
    scale = np.linalg.norm(lam)
    if scale == 0.0:
        return AntisymDecomposition(r=np.eye(d), eta=np.zeros(0), d0=d)

    evals, evecs = np.linalg.eigh(1j * lam)
    tol = _RANK_TOL * scale
    pos = np.where(evals > tol)[0]
    # eigh sorts ascending; arrange positive rates descending.
    pos = pos[np.argsort(-evals[pos])]
    rows = []
    for idx in pos:
        v = evecs[:, idx]
        a = np.sqrt(2.0) * v.real
        b = np.sqrt(2.0) * v.imag
        rows.extend([a, b])
    d1 = len(pos)
    d0 = d - 2 * d1
    if d0 > 0:
        # Real null basis via SVD; rows for the d0 smallest singular values.
        _, _, vt = np.linalg.svd(lam)
        rows.extend(list(vt[d - d0 :]))
    r = np.array(rows)
    eta = evals[pos]
    return AntisymDecomposition(r=r, eta=np.asarray(eta, dtype=np.float64), d0=d0)


def joint_cf(t: float, mu: np.ndarray, lambda_flat: np.ndarray) -> float:
    """Closed-form joint CF of (increment, area); real, in (0, 1]."""
    if t <= 0:
        raise ValueError(f"t must be positive, got {t}")
    mu = np.asarray(mu, dtype=np.float64)
    d = mu.shape[-1]
    dec = antisym_decompose(np.asarray(lambda_flat, dtype=np.float64), d)
    rmu = dec.r @ mu
    val = 1.0
    expo = 0.0
    for i, eta in enumerate(dec.eta):
        x = 0.5 * eta * t
        val /= np.cosh(x)
        pair = rmu[2 * i] ** 2 + rmu[2 * i + 1] ** 2
        if eta * t < _ETA_SMALL:
            # tanh(eta t/2)/eta = t/2 * (1 - (eta t/2)^2/3 + ...)
            factor = 0.5 * t * (1.0 - x * x / 3.0)
        else:
            factor = np.tanh(x) / eta
        expo -= pair * factor
    if dec.d0 > 0:
        tail = rmu[2 * dec.d1 :]
        expo -= 0.5 * t * float(tail @ tail)
    return float(val * np.exp(expo))


@dataclass
class FrequencySet:
    """Probe frequencies for characteristic-function comparison.

    degree 1: ``vectors`` of shape (M, dim) holds real frequency vectors.
    degree n > 1: ``maps`` of shape (M, dim, n, n) holds, per probe, the
    anti-Hermitian images of the dim coordinate directions.
    """

    degree: int
    vectors: np.ndarray | None = None
    maps: np.ndarray | None = None

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.degree == 1:
            if self.vectors is None:
                raise ValueError("degree-1 frequency set needs vectors")
            self.vectors = np.asarray(self.vectors, dtype=np.float64)
        else:
            if self.maps is None:
                raise ValueError(f"degree-{self.degree} frequency set needs maps")
            self.maps = np.asarray(self.maps, dtype=np.complex128)
            herm_err = np.abs(self.maps + np.conj(np.swapaxes(self.maps, -1, -2))).max()
            if herm_err > 1e-12:
                raise ValueError(f"basis images are not anti-Hermitian (err {herm_err:.2e})")

    @property
    def m(self) -> int:
        arr = self.vectors if self.degree == 1 else self.maps
        return arr.shape[0]

    @property
    def dim(self) -> int:
        arr = self.vectors if self.degree == 1 else self.maps
        return arr.shape[1]


def gaussian_frequencies(
    stream: RngStream, m: int, dim: int, scale: float = 1.0
) -> FrequencySet:
    """M i.i.d. N(0, scale^2 I) degree-1 frequency vectors."""
    from .rng import gauss

    return FrequencySet(degree=1, vectors=gauss(stream, m, scale * scale, dim))


def cauchy_frequencies(stream: RngStream, m: int, dim: int, scale: float = 1.0) -> FrequencySet:
    """M i.i.d. coordinatewise Cauchy(scale) degree-1 frequency vectors."""
    u = stream.generator.random((m, dim))
    return FrequencySet(degree=1, vectors=scale * np.tan(np.pi * (u - 0.5)))


def unitary_frequencies(stream: RngStream, m: int, dim: int, degree: int) -> FrequencySet:
    """Random linear maps into the anti-Hermitian matrices of size degree.

    Each coordinate image is (G - G^H)/2 + i diag-free ... in practice a
    Gaussian anti-Hermitian matrix scaled so its norm is comparable to a
    unit frequency vector.
    """
    if degree == 1:
        return gaussian_frequencies(stream, m, dim)
    g = stream.generator
    x = g.standard_normal((m, dim, degree, degree))
    y = g.standard_normal((m, dim, degree, degree))
    z = x + 1j * y
    maps = 0.5 * (z - np.conj(np.swapaxes(z, -1, -2)))
    maps /= np.sqrt(degree)
    return FrequencySet(degree=degree, maps=maps)


def _joint_matrix(batch: LevyBatch | np.ndarray) -> np.ndarray:
    if isinstance(batch, LevyBatch):
        return batch.joint()
    return np.asarray(batch, dtype=np.float64)


def empirical_cf(batch, freqs: FrequencySet, chunk: int = 1 << 16) -> np.ndarray:
    """Empirical characteristic function at degree-1 frequencies.

    Returns a complex vector of length M; every entry has modulus <= 1.
    """
    if freqs.degree != 1:
        raise ValueError("empirical_cf needs a degree-1 frequency set")
    x = _joint_matrix(batch)
    if x.shape[1] != freqs.dim:
        raise ValueError(f"dimension mismatch: samples {x.shape[1]}, freqs {freqs.dim}")
    total = np.zeros(freqs.m, dtype=np.complex128)
    n = x.shape[0]
    for start in range(0, n, chunk):
        xs = x[start : start + chunk]
        total += np.exp(1j * (xs @ freqs.vectors.T)).sum(axis=0)
    return total / n


def unitary_representation(x: np.ndarray, freqs: FrequencySet) -> np.ndarray:
    """exp(M_k(x_s)) for all samples s and probes k; shape (n, M, deg, deg).

    Computed by unitary diagonalization of the Hermitian matrix -i M(x),
    so each factor is unitary to machine precision.
    """
    maps = freqs.maps
    mx = np.einsum("sk,mkij->smij", x, maps)
    herm = -1j * mx
    evals, evecs = np.linalg.eigh(herm)
    phases = np.exp(1j * evals)
    return np.einsum("smij,smj,smkj->smik", evecs, phases, np.conj(evecs))


def ucf(batch, freqs: FrequencySet, chunk: int = 1 << 12) -> np.ndarray:
    """Empirical unitary CF: mean of exp(M(x)) per probe; (M, deg, deg).

    Degree 1 reduces to the plain empirical CF (returned as (M, 1, 1)).
    """
    if freqs.degree == 1:
        return empirical_cf(batch, freqs).reshape(-1, 1, 1)
    x = _joint_matrix(batch)
    if x.shape[1] != freqs.dim:
        raise ValueError(f"dimension mismatch: samples {x.shape[1]}, freqs {freqs.dim}")
    n = x.shape[0]
    total = np.zeros((freqs.m, freqs.degree, freqs.degree), dtype=np.complex128)
    for start in range(0, n, chunk):
        u = unitary_representation(x[start : start + chunk], freqs)
        total += u.sum(axis=0)
    return total / n


def cfd(batch1, batch2, freqs: FrequencySet) -> float:
    """Mean over probes of |ECF1 - ECF2| (degree 1)."""
    e1 = empirical_cf(batch1, freqs)
    e2 = empirical_cf(batch2, freqs)
    return float(np.mean(np.abs(e1 - e2)))


def ucfd(batch1, batch2, freqs: FrequencySet) -> float:
    """Mean over probes of the Hilbert-Schmidt norm of the EUCF difference."""
    u1 = ucf(batch1, freqs)
    u2 = ucf(batch2, freqs)
    diff = u1 - u2
    return float(np.mean(np.sqrt(np.sum(np.abs(diff) ** 2, axis=(-2, -1)))))

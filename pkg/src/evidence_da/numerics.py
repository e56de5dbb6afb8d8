"""Special functions, symmetric eigendecomposition, Cholesky and seeded sampling.

Every routine here is a pure function of its inputs. The Gamma-family
functions accept scalars or numpy arrays and return the same shape.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

EULER_GAMMA = 0.5772156649015329
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_SHIFT_TO = 8.0

# psi(x) ~ ln x - 1/(2x) - sum_k B_2k / (2k x^2k)
_PSI_SERIES = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
# ln Gamma(x) ~ (x - 1/2) ln x - x + ln sqrt(2 pi) + sum_k B_2k / (2k (2k-1) x^(2k-1))
_STIRLING_SERIES = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
)


class NumericsError(ValueError):
    """Domain violation or numerical failure in a numerics routine."""


class ConvergenceError(NumericsError):
    pass


def _as_positive(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0.0) | ~np.isfinite(arr)):
        raise NumericsError(f"{name} requires finite x > 0, got {x!r}")
    return arr


def _scalar_or_array(value: np.ndarray, like):
    if np.ndim(like) == 0:
        return float(value)
    return value


def digamma(x):
    """Digamma function psi(x) = d/dx ln Gamma(x) for x > 0."""
    arr = _as_positive(x, "digamma")
    x = np.array(arr, dtype=float, copy=True)
    acc = np.zeros_like(x)
    # recurrence psi(x) = psi(x + 1) - 1/x until the asymptotic series is accurate
    while True:
        small = x < _SHIFT_TO
        if not np.any(small):
            break
        acc[small] -= 1.0 / x[small]
        x[small] += 1.0
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    for coef in reversed(_PSI_SERIES):
        series = (series + coef) * inv2
    out = acc + np.log(x) - 0.5 / x - series
    return _scalar_or_array(out, arr)


def log_gamma(x):
    """Natural log of the Gamma function for x > 0."""
    arr = _as_positive(x, "log_gamma")
    x = np.array(arr, dtype=float, copy=True)
    prod = np.ones_like(x)
    while True:
        small = x < _SHIFT_TO
        if not np.any(small):
            break
        prod[small] *= x[small]
        x[small] += 1.0
    # at most 8 factors of size < 8 each, so the running product cannot overflow
    log_prod = np.log(prod)
    inv = 1.0 / x
    inv2 = inv * inv
    series = np.zeros_like(x)
    for coef in reversed(_STIRLING_SERIES):
        series = series * inv2 + coef
    out = (x - 0.5) * np.log(x) - x + _HALF_LOG_2PI + series * inv - log_prod
    return _scalar_or_array(out, arr)


def log_multivariate_gamma(p: int, a):
    """ln Gamma_p(a) = p(p-1)/4 ln(pi) + sum_{j=1..p} ln Gamma(a - (j-1)/2)."""
    if int(p) != p or p < 1:
        raise NumericsError(f"log_multivariate_gamma needs integer p >= 1, got {p!r}")
    p = int(p)
    a_arr = np.asarray(a, dtype=float)
    if np.any(~(a_arr > 0.5 * (p - 1))):
        raise NumericsError(f"log_multivariate_gamma needs a > {(p - 1) / 2}, got {a!r}")
    offsets = 0.5 * np.arange(p, dtype=float)
    args = a_arr[..., None] - offsets
    out = 0.25 * p * (p - 1) * math.log(math.pi) + np.sum(log_gamma(args), axis=-1)
    return _scalar_or_array(out, a_arr)


def _series(x: np.ndarray, coefs, odd: bool) -> np.ndarray:
    inv2 = 1.0 / (x * x)
    acc = np.zeros_like(x)
    for coef in reversed(coefs):
        acc = acc * inv2 + coef
    return acc / x if odd else acc * inv2


def log_gamma_diff(a, h):
    """ln Gamma(a + h) - ln Gamma(a) without cancellation for large ``a``.

    ``a`` and ``a + h`` must be positive; ``h`` is broadcast against ``a``.
    """
    a = np.asarray(a, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), a.shape)
    b = a + h
    _as_positive(a, "log_gamma_diff")
    _as_positive(b, "log_gamma_diff")
    big = (a >= _SHIFT_TO) & (b >= _SHIFT_TO)
    out = np.empty_like(a)
    if np.any(~big):
        out[~big] = log_gamma(b[~big]) - log_gamma(a[~big])
    if np.any(big):
        ab, hb, bb = a[big], h[big], b[big]
        out[big] = (
            (ab - 0.5) * np.log1p(hb / ab)
            + hb * np.log(bb)
            - hb
            + _series(bb, _STIRLING_SERIES, odd=True)
            - _series(ab, _STIRLING_SERIES, odd=True)
        )
    return _scalar_or_array(out, a)


def digamma_diff(a, h):
    """psi(a + h) - psi(a) without cancellation for large ``a``."""
    a = np.asarray(a, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), a.shape)
    b = a + h
    _as_positive(a, "digamma_diff")
    _as_positive(b, "digamma_diff")
    big = (a >= _SHIFT_TO) & (b >= _SHIFT_TO)
    out = np.empty_like(a)
    if np.any(~big):
        out[~big] = digamma(b[~big]) - digamma(a[~big])
    if np.any(big):
        ab, hb, bb = a[big], h[big], b[big]
        out[big] = (
            np.log1p(hb / ab)
            + 0.5 * hb / (ab * bb)
            - _series(bb, _PSI_SERIES, odd=False)
            + _series(ab, _PSI_SERIES, odd=False)
        )
    return _scalar_or_array(out, a)


@dataclass(frozen=True)
class SymEigen:
    """Eigendecomposition of a symmetric matrix.

    ``eigenvalues`` ascend; column ``i`` of ``eigenvectors`` pairs with
    eigenvalue ``i``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T

    def clamped(self) -> np.ndarray:
        """Eigenvalues with rounding-level negatives set to exactly zero."""
        return np.maximum(self.eigenvalues, 0.0)


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude component of each eigenvector made positive
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _check_symmetric(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NumericsError(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if m.size and float(np.max(np.abs(m - m.T))) > 1e-12 * scale:
        raise NumericsError("matrix is not symmetric")
    return 0.5 * (m + m.T)


def jacobi_eigh(m, tol: float = 1e-12, max_sweeps: int = 100) -> SymEigen:
    """Cyclic Jacobi eigenvalue algorithm for symmetric matrices.

    Sweeps over all (p, q) pairs in row order, annihilating each
    off-diagonal entry with a plane rotation. Stops once the off-diagonal
    Frobenius norm drops below ``tol * ||M||_F``.
    """
    a = _check_symmetric(m).copy()
    d = a.shape[0]
    v = np.eye(d)
    norm = float(np.linalg.norm(a))
    if d <= 1 or norm == 0.0:
        return SymEigen(np.diag(a).copy(), v)
    threshold = tol * norm
    for _ in range(max_sweeps):
        off = math.sqrt(max(0.0, float(np.sum(a * a) - np.sum(np.diag(a) ** 2))))
        if off < threshold:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q]
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :]
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = math.sqrt(max(0.0, float(np.sum(a * a) - np.sum(np.diag(a) ** 2))))
        if off >= threshold:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return SymEigen(w[order], _canonical_signs(v[:, order]))


def eig_sym(m, method: str = "lapack") -> SymEigen:
    """Symmetric eigendecomposition.

    ``method="lapack"`` uses ``numpy.linalg.eigh``; ``method="jacobi"`` runs
    :func:`jacobi_eigh`. Eigenvector signs are canonicalized either way, so
    output is deterministic for identical input.
    """
    if method == "jacobi":
        return jacobi_eigh(m)
    if method != "lapack":
        raise ValueError(f"unknown eigensolver {method!r}")
    a = _check_symmetric(m)
    w, v = np.linalg.eigh(a)
    return SymEigen(w, _canonical_signs(v))


def cholesky(m) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive semidefinite matrix.

    Rounding-level negative pivots are treated as zero, which leaves the
    corresponding column of the factor empty. A pivot below
    ``-1e-8 * max|M|`` raises.
    """
    a = _check_symmetric(m)
    d = a.shape[0]
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    neg_tol = 1e-8 * scale
    zero_tol = 1e-14 * scale
    lower = np.zeros_like(a)
    for j in range(d):
        row = lower[j, :j]
        pivot = a[j, j] - float(row @ row)
        if pivot < -neg_tol:
            raise NumericsError(f"matrix is not positive semidefinite (pivot {pivot:.3e} at {j})")
        if pivot <= zero_tol:
            continue
        ljj = math.sqrt(pivot)
        lower[j, j] = ljj
        if j + 1 < d:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ row) / ljj
    return lower


def stable_stream_id(*keys) -> int:
    """64-bit stream id from a tuple of keys, stable across processes and platforms."""
    digest = hashlib.blake2b(repr(keys).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngStream:
    """Value-type handle on a reproducible random stream.

    The pair (seed, stream) fully determines the sequence, independent of
    how many other streams were used before.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed & (2**64 - 1), spawn_key=(self.stream & (2**64 - 1),))
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, *keys) -> "RngStream":
        return RngStream(self.seed, stable_stream_id(self.stream, *keys))


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def sample_gaussian_vector(mean, chol_lower, rng) -> np.ndarray:
    """One draw ``mean + L u`` with ``u`` standard normal."""
    return sample_gaussian(mean, chol_lower, 1, rng)[0]


def sample_gaussian(mean, chol_lower, size: int, rng) -> np.ndarray:
    """``size`` independent draws, one per row."""
    mean = np.asarray(mean, dtype=float)
    chol_lower = np.asarray(chol_lower, dtype=float)
    gen = _generator(rng)
    u = gen.standard_normal((size, mean.shape[0]))
    return mean + u @ chol_lower.T

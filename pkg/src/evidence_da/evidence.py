"""Evidence objectives for models A and B and the hyperparameter solver.

Per class the Wishart seed is ``S = k I`` with ``r`` degrees of freedom.
Writing ``m = n_z`` (model A) or ``m = n_z - 1`` (model B) and ``xi`` for
the eigenvalues of the class covariance, the part of ``-log evidence`` that
depends on ``(k, r)`` is

    (d r / 2) ln k - ln Gamma_d((r + m) / 2) + ln Gamma_d(r / 2)
        + ((r + m) / 2) sum_i ln(n_z xi_i + 1/k)

Its stationary points satisfy

    r = m s / (1 - s),              s = (1/d) sum_i 1 / (n_z k xi_i + 1)
    F(r) = (1/d) sum_i ln(n_z k xi_i + 1)

with ``F(r) = (1/d) sum_j [psi((r + m - j + 1)/2) - psi((r - j + 1)/2)]``.

For fixed ``k`` the objective is convex in ``r``, so the solver works on the
profile over ``ln k`` and collects every stationary point plus the ``r = d``
boundary family and the ``k`` floor, then keeps the lowest objective.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .numerics import (
    ConvergenceError,
    NumericsError,
    digamma_diff,
    log_gamma_diff,
    log_multivariate_gamma,
)
from .stats import ClassSufficientStats

K_MIN = 1e-12
# fixed large k used when the evidence keeps improving as k grows without bound
K_CEILING_FACTOR = 1e3
GAMMA0_MEAN_FLOOR = 1e-12
TIE_TOLERANCE = 1e-9

_SCAN_BELOW = 30.0
_SCAN_ABOVE = 40.0
_SCAN_STEP = 0.25
_LOG_K_XTOL = 1e-13


class Variant(str, enum.Enum):
    A = "A"
    B = "B"

    @property
    def count_offset(self) -> int:
        return 0 if self is Variant.A else 1

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown model variant {value!r}; expected 'A' or 'B'") from None


def effective_count(n: int, variant) -> int:
    return n - Variant.parse(variant).count_offset


class _Spectrum:
    """Eigenvalue-only view of one class used by all objective evaluations."""

    def __init__(self, xi: np.ndarray, n: int, d: int, m: int):
        self.xi = np.asarray(xi, dtype=float)
        self.n = n
        self.d = d
        self.m = m
        self.half_j = 0.5 * np.arange(d, dtype=float)  # (j - 1)/2 for j = 1..d
        self.positive = self.xi[self.xi > 0.0]
        self.rank = int(self.positive.size)
        mean_pos = float(self.positive.mean()) if self.rank else 1.0
        self.k_scale = 1.0 / (n * mean_pos)

    @classmethod
    def of(cls, stats: ClassSufficientStats, variant) -> "_Spectrum":
        return cls(stats.xi, stats.n, stats.d, effective_count(stats.n, variant))

    def _t(self, k):
        return self.n * np.multiply.outer(np.asarray(k, dtype=float), self.xi)

    def s(self, k):
        return np.mean(1.0 / (self._t(k) + 1.0), axis=-1)

    def one_minus_s(self, k):
        t = self._t(k)
        return np.mean(t / (t + 1.0), axis=-1)

    def mean_log(self, k):
        return np.mean(np.log1p(self._t(k)), axis=-1)

    def r_from_k(self, k):
        """``r`` solving the k-stationarity equation at this ``k``."""
        oms = self.one_minus_s(k)
        with np.errstate(divide="ignore"):
            return np.where(oms > 0, self.m * (1.0 - oms) / np.where(oms > 0, oms, 1.0), np.inf)

    def digamma_mean(self, r):
        """F(r): mean over j of psi((r+m-j+1)/2) - psi((r-j+1)/2)."""
        r = np.asarray(r, dtype=float)
        a = 0.5 * r[..., None] - self.half_j
        if self.m == 0:
            return np.zeros(r.shape)
        return np.mean(digamma_diff(a, 0.5 * self.m), axis=-1)

    def objective(self, k: float, r: float) -> float:
        if not (k > 0 and r >= self.d - 1e-12 * self.d):
            raise NumericsError(f"objective needs k > 0 and r >= d, got k={k!r}, r={r!r}")
        a = 0.5 * r - self.half_j
        lg = float(np.sum(log_gamma_diff(a, 0.5 * self.m))) if self.m else 0.0
        return (
            -0.5 * self.d * self.m * math.log(k)
            + 0.5 * self.d * (r + self.m) * float(self.mean_log(k))
            - lg
        )

    def r_at_k(self, k: float) -> float:
        """Optimal ``r`` at fixed ``k`` (the objective is convex in ``r``)."""
        target = float(self.mean_log(k))
        f_d = float(self.digamma_mean(self.d))
        if target >= f_d or self.m == 0:
            return float(self.d)
        if target <= 0.0:
            return math.inf
        lo = math.log(self.d)
        hi = lo + 1.0
        while float(self.digamma_mean(math.exp(hi))) > target:
            hi += 2.0
            if hi > 200.0:
                return math.inf
        g = lambda lr: float(self.digamma_mean(math.exp(lr))) - target
        return math.exp(brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps))


def per_class_objective(stats: ClassSufficientStats, k: float, r: float, variant) -> float:
    """(k, r)-dependent part of ``-log evidence`` for one class."""
    return _Spectrum.of(stats, variant).objective(float(k), float(r))


def gamma0(stats: ClassSufficientStats) -> float:
    """Mean-prior precision ``d / |mean|^2`` of model B, capped for near-zero means."""
    sq = float(stats.mean @ stats.mean)
    d = stats.d
    return d / max(sq, GAMMA0_MEAN_FLOOR * d)


def gamma0_is_capped(stats: ClassSufficientStats) -> bool:
    return float(stats.mean @ stats.mean) < GAMMA0_MEAN_FLOOR * stats.d


def log_evidence(stats: ClassSufficientStats, k: float, r: float, variant, mean_prior: float) -> float:
    """ln of the per-class evidence integral with every constant kept.

    ``mean_prior`` is the finite mean-prior strength of the branch: the
    coefficient multiplying the precision matrix (model A) or the isotropic
    mean-prior precision (model B). Model A's objective is the
    ``mean_prior -> 0`` limit with ``(d/2) ln mean_prior`` removed.
    """
    variant = Variant.parse(variant)
    n, d = stats.n, stats.d
    m = effective_count(n, variant)
    xi = stats.xi
    if variant is Variant.A:
        mat = n * stats.cov + mean_prior * np.outer(stats.mean, stats.mean) + np.eye(d) / k
        sign, logdet = np.linalg.slogdet(mat)
        if sign <= 0:
            raise NumericsError("regularized scatter matrix is not positive definite")
        extra = 0.0
    else:
        logdet = float(np.sum(np.log(n * xi + 1.0 / k)))
        extra = -0.5 * mean_prior * float(stats.mean @ stats.mean)
    return (
        0.5 * d * (m * math.log(2.0) + math.log(mean_prior / n) - r * math.log(k))
        + log_multivariate_gamma(d, 0.5 * (r + m))
        - log_multivariate_gamma(d, 0.5 * r)
        - 0.5 * (r + m) * logdet
        + extra
    )


def objective_constant(stats: ClassSufficientStats, variant, mean_prior: float) -> float:
    """``-log_evidence - per_class_objective`` at ``mean_prior``.

    Exact for model B; for model A only in the ``mean_prior -> 0`` limit.
    """
    variant = Variant.parse(variant)
    n, d = stats.n, stats.d
    m = effective_count(n, variant)
    const = -0.5 * d * (m * math.log(2.0) + math.log(mean_prior / n))
    if variant is Variant.B:
        const += 0.5 * mean_prior * float(stats.mean @ stats.mean)
    return const


def stationarity_residuals(stats: ClassSufficientStats, k: float, r: float, variant) -> tuple[float, float]:
    """Residuals of the k- and r-stationarity equations.

    ``res_k = r - m s / (1 - s)`` and ``res_r = F(r) - (1/d) sum ln(n k xi + 1)``;
    they are ``2k dO/dk / (d (1 - s))`` and ``-2 dO/dr / d`` respectively.
    """
    spec = _Spectrum.of(stats, variant)
    res_k = float(r) - float(spec.r_from_k(k))
    res_r = float(spec.digamma_mean(r)) - float(spec.mean_log(k))
    return res_k, res_r


def solve_r_given_k(stats: ClassSufficientStats, k: float, variant) -> float:
    """Evidence-optimal ``r`` at a fixed seed scale ``k``."""
    return _Spectrum.of(stats, variant).r_at_k(float(k))


def k_upper_limit(stats: ClassSufficientStats, variant) -> float:
    """Largest ``k`` keeping the k-equation's ``r`` above ``d - 1``.

    Falls back to ``K_CEILING_FACTOR / (n_z * mean positive eigenvalue)``
    when ``r`` never drops to ``d - 1``.
    """
    spec = _Spectrum.of(stats, variant)
    target = spec.d - 1.0
    fallback = K_CEILING_FACTOR * spec.k_scale
    if spec.rank == 0:
        return fallback
    r_inf = spec.m * (spec.d - spec.rank) / spec.rank
    if r_inf >= target:
        return fallback
    g = lambda lk: float(spec.r_from_k(math.exp(lk))) - target
    lo = math.log(spec.k_scale) - _SCAN_BELOW
    hi = math.log(spec.k_scale) + 1.0
    while g(hi) > 0:
        hi += 5.0
    while g(lo) < 0:
        lo -= 5.0
    return math.exp(brentq(g, lo, hi, xtol=_LOG_K_XTOL))


@dataclass(frozen=True)
class Candidate:
    kind: str
    k: float
    r: float
    objective: float


@dataclass(frozen=True)
class ClassSolution:
    """Solver output for one class.

    ``kind`` names the winning candidate family: ``interior``, ``boundary``
    (r = d), ``floor`` (k = K_MIN) or ``ceiling`` (fixed large k, used only when
    the evidence is unbounded in k and has no finite local optimum).
    """

    k: float
    r: float
    objective: float
    kind: str
    flags: tuple[str, ...] = ()
    candidates: tuple[Candidate, ...] = field(default=(), repr=False)


def _boundary_k(spec: _Spectrum) -> float | None:
    # k with r_from_k(k) == d; r_from_k decreases monotonically in k
    if spec.rank == 0:
        return None
    r_inf = spec.m * (spec.d - spec.rank) / spec.rank
    if r_inf >= spec.d:
        return None
    g = lambda lk: float(spec.r_from_k(math.exp(lk))) - spec.d
    lo = max(math.log(K_MIN), math.log(spec.k_scale) - _SCAN_BELOW)
    hi = math.log(spec.k_scale) + 1.0
    if g(lo) < 0:
        return None
    while g(hi) > 0:
        hi += 5.0
    return math.exp(brentq(g, lo, hi, xtol=_LOG_K_XTOL))


def _profile_sign(spec: _Spectrum, log_k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sign proxy of d(profile)/dk on a grid, and whether the k-equation r is >= d."""
    k = np.exp(log_k)
    r = spec.r_from_k(k)
    feasible = np.isfinite(r) & (r >= spec.d)
    h = np.ones_like(k)
    if np.any(feasible):
        h[feasible] = spec.digamma_mean(r[feasible]) - spec.mean_log(k[feasible])
    return h, feasible


def _edge_safe_sign(spec: _Spectrum, log_k: float) -> float:
    # continuous extension of the slope proxy up to the r = d edge
    k = math.exp(log_k)
    r = max(float(spec.r_from_k(k)), float(spec.d))
    return float(spec.digamma_mean(r)) - float(spec.mean_log(k))


def _pick(candidates: list[Candidate]) -> Candidate:
    best = min(c.objective for c in candidates)
    near = [c for c in candidates if c.objective - best < TIE_TOLERANCE * max(1.0, abs(best))]
    return min(near, key=lambda c: (c.r, c.k))


def solve_class(stats: ClassSufficientStats, variant) -> ClassSolution:
    """Minimize the class objective over ``k >= K_MIN`` and ``r >= d``.

    The local minima of the profile ``min_r objective(k, r)`` are collected
    (interior stationary points, the ``r = d`` edge and the ``k`` floor) and
    the lowest one wins. When the objective decreases without bound as ``k``
    grows (possible for model A when ``d`` is large compared with ``n_z``),
    the best finite local minimum is returned with the ``unbounded-k`` flag;
    only if none exists is a fixed large ``k`` used.
    """
    variant = Variant.parse(variant)
    spec = _Spectrum.of(stats, variant)
    flags: list[str] = []
    candidates: list[Candidate] = []

    def add(kind: str, k: float, r: float):
        if not (math.isfinite(k) and math.isfinite(r)):
            flags.append(f"discarded-{kind}")
            return
        r = max(r, float(spec.d))
        value = spec.objective(k, r)
        if math.isfinite(value):
            candidates.append(Candidate(kind, k, r, value))
        else:
            flags.append(f"discarded-{kind}")

    lo = max(math.log(K_MIN), math.log(spec.k_scale) - _SCAN_BELOW)
    hi = math.log(spec.k_scale) + _SCAN_ABOVE
    grid = np.arange(lo, hi + _SCAN_STEP, _SCAN_STEP)
    kb = _boundary_k(spec) if spec.rank > 0 and spec.m > 0 else None
    if kb is not None:
        # the profile slope can change sign right at the r = d edge
        grid = np.union1d(grid, [math.log(kb)])
    h, feasible = _profile_sign(spec, grid)
    if kb is not None:
        at_edge = grid == math.log(kb)
        feasible[at_edge] = True
        h[at_edge] = float(spec.digamma_mean(spec.d)) - float(spec.mean_log(kb))

    # candidates are the local minima of the profile over k: slope sign - -> +
    if spec.rank > 0 and spec.m > 0:
        for i in range(grid.size - 1):
            if not (feasible[i] and feasible[i + 1]):
                continue
            if not (h[i] < 0.0 < h[i + 1]):
                continue
            lk = brentq(lambda lk: _edge_safe_sign(spec, lk), grid[i], grid[i + 1], xtol=_LOG_K_XTOL)
            k = math.exp(lk)
            add("interior", k, float(spec.r_from_k(k)))

        if kb is not None and float(spec.digamma_mean(spec.d)) <= float(spec.mean_log(kb)):
            # the r = d edge is optimal in r there and the profile turns upward past it
            add("boundary", kb, float(spec.d))

    if h[0] >= 0.0 or spec.rank == 0 or spec.m == 0:
        add("floor", K_MIN, spec.r_at_k(K_MIN))

    # evidence still improving at the top of the scan: unbounded as k grows
    top_k = math.exp(grid[-1])
    top_r = spec.r_at_k(top_k)
    top_slope = top_r * float(spec.one_minus_s(top_k)) - spec.m * float(spec.s(top_k))
    if spec.rank == 0 or spec.m == 0 or top_slope < 0:
        flags.append("unbounded-k")
        if not candidates:
            # no finite local optimum: fall back to a fixed large k
            k_ceiling = K_CEILING_FACTOR * spec.k_scale
            r_ceiling = spec.r_at_k(k_ceiling)
            if spec.rank == 0:
                # all-zero spectrum: the evidence is unbounded in r as well
                flags.append("degenerate-spectrum")
                r_ceiling = float(spec.d)
            add("ceiling", k_ceiling, r_ceiling)

    if not candidates:
        raise ConvergenceError(f"no admissible hyperparameter candidate (flags: {flags})")
    best = _pick(candidates)
    if best.kind == "floor":
        flags.append("k-at-floor")
    return ClassSolution(best.k, best.r, best.objective, best.kind, tuple(flags), tuple(candidates))


@dataclass(frozen=True)
class HyperParams:
    """Solved hyperparameters, one entry per class (index 0 is class 1)."""

    variant: Variant
    p: np.ndarray
    k: np.ndarray
    r: np.ndarray
    gamma0: np.ndarray
    solutions: tuple[ClassSolution, ...] = field(default=(), repr=False, compare=False)

    @property
    def n_classes(self) -> int:
        return int(self.p.shape[0])


@dataclass(frozen=True)
class EvidenceTerms:
    per_class: np.ndarray
    total: float


def evidence_terms(stats_by_class: dict[int, ClassSufficientStats], hyper: HyperParams) -> EvidenceTerms:
    values = np.array(
        [
            per_class_objective(stats_by_class[z], hyper.k[z - 1], hyper.r[z - 1], hyper.variant)
            for z in sorted(stats_by_class)
        ]
    )
    return EvidenceTerms(values, float(values.sum()))


def class_priors(stats_by_class: dict[int, ClassSufficientStats]) -> np.ndarray:
    counts = np.array([stats_by_class[z].n for z in sorted(stats_by_class)], dtype=float)
    return counts / counts.sum()


def solve_hyperparameters(stats_by_class: dict[int, ClassSufficientStats], variant) -> HyperParams:
    """Evidence-maximizing hyperparameters for every class."""
    variant = Variant.parse(variant)
    labels = sorted(stats_by_class)
    solutions = tuple(solve_class(stats_by_class[z], variant) for z in labels)
    return assemble_hyperparameters(stats_by_class, variant, solutions)


def assemble_hyperparameters(stats_by_class, variant, solutions) -> HyperParams:
    variant = Variant.parse(variant)
    labels = sorted(stats_by_class)
    if variant is Variant.A:
        g0 = np.zeros(len(labels))
    else:
        g0 = np.array([gamma0(stats_by_class[z]) for z in labels])
    return HyperParams(
        variant=variant,
        p=class_priors(stats_by_class),
        k=np.array([s.k for s in solutions]),
        r=np.array([s.r for s in solutions]),
        gamma0=g0,
        solutions=tuple(solutions),
    )


def hyperparameters_at_k(stats_by_class, variant, k_values) -> HyperParams:
    """Hyperparameters with ``k`` fixed per class and ``r`` solved from the evidence."""
    variant = Variant.parse(variant)
    labels = sorted(stats_by_class)
    solutions = []
    for z, k in zip(labels, k_values):
        stats = stats_by_class[z]
        r = solve_r_given_k(stats, k, variant)
        solutions.append(ClassSolution(float(k), r, per_class_objective(stats, k, r, variant), "fixed-k"))
    return assemble_hyperparameters(stats_by_class, variant, solutions)

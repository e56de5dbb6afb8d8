"""Labeled datasets and per-class sufficient statistics.

All model formulas depend on the data only through, per class, the count
``n_z``, the sample mean and the sample covariance with divisor ``n_z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import SymEigen, eig_sym


# covariance eigenvalues below this fraction of the largest one are rounding noise
EIGEN_RANK_RTOL = 1e-10


class DataError(ValueError):
    """Malformed dataset or statistics request."""


class EmptyClassError(DataError):
    def __init__(self, label: int):
        super().__init__(f"class {label} has no samples")
        self.label = label


@dataclass(frozen=True)
class LabeledDataset:
    """``n`` covariate rows in ``X`` with labels ``y`` in ``1..n_classes``.

    ``label_names[z - 1]`` is the original label of class ``z`` when the data
    came from a file with non-integer labels.
    """

    X: np.ndarray
    y: np.ndarray
    n_classes: int
    label_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"X must be a non-empty n x d matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError(f"y must have length {X.shape[0]}, got shape {y.shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("X contains non-finite values")
        if y.size and (not np.issubdtype(y.dtype, np.integer) and not np.all(y == np.round(y))):
            raise DataError("labels must be integers")
        y = y.astype(np.int64)
        if self.n_classes < 1 or y.min() < 1 or y.max() > self.n_classes:
            raise DataError(f"labels must lie in 1..{self.n_classes}")
        if self.label_names is not None and len(self.label_names) != self.n_classes:
            raise DataError("label_names must have one entry per class")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes + 1)[1:]

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index)
        return LabeledDataset(self.X[index], self.y[index], self.n_classes, self.label_names)

    def without(self, i: int) -> "LabeledDataset":
        keep = np.ones(self.n, dtype=bool)
        keep[i] = False
        return self.subset(keep)


@dataclass(frozen=True)
class ClassSufficientStats:
    n: int
    mean: np.ndarray
    cov: np.ndarray
    eigen: SymEigen = field(repr=False)

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @property
    def xi(self) -> np.ndarray:
        """Covariance eigenvalues with rounding-level values set to exactly zero."""
        xi = self.eigen.clamped()
        top = float(xi.max()) if xi.size else 0.0
        return np.where(xi > EIGEN_RANK_RTOL * top, xi, 0.0)

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.xi))

    @classmethod
    def from_samples(cls, samples) -> "ClassSufficientStats":
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        if n == 0:
            raise DataError("cannot compute statistics of an empty sample")
        mean = samples.mean(axis=0)
        centered = samples - mean
        cov = centered.T @ centered / n
        return cls.from_moments(n, mean, cov)

    @classmethod
    def from_moments(cls, n: int, mean, cov) -> "ClassSufficientStats":
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        cov = 0.5 * (cov + cov.T)
        eigen = eig_sym(cov)
        for arr in (mean, cov, eigen.eigenvalues, eigen.eigenvectors):
            arr.setflags(write=False)
        return cls(int(n), mean, cov, eigen)


def compute_class_stats(data: LabeledDataset) -> dict[int, ClassSufficientStats]:
    """Per-class count, mean and covariance (divisor ``n_z``), keyed by label."""
    out = {}
    for z in range(1, data.n_classes + 1):
        members = data.X[data.y == z]
        if members.shape[0] == 0:
            raise EmptyClassError(z)
        out[z] = ClassSufficientStats.from_samples(members)
    return out


def downdate_stats(stats: ClassSufficientStats, x) -> ClassSufficientStats:
    """Statistics of the class after removing member ``x``.

    Works on the second-moment matrix ``S = n (C + m m^T)`` and recomputes
    the eigendecomposition.
    """
    if stats.n < 2:
        raise DataError("downdate would leave the class empty")
    x = np.asarray(x, dtype=float)
    n = stats.n
    second = n * (stats.cov + np.outer(stats.mean, stats.mean)) - np.outer(x, x)
    n_new = n - 1
    mean_new = (n * stats.mean - x) / n_new
    cov_new = second / n_new - np.outer(mean_new, mean_new)
    return ClassSufficientStats.from_moments(n_new, mean_new, cov_new)

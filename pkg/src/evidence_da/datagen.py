"""Synthetic benchmark populations, stratified splits and CSV input/output.

The ten synthetic populations all have three classes. Cases 1 and 2 are
isotropic, 3 to 6 are diagonal with index-dependent variances, and 7 to 10
use random ``R^T R`` covariances that have one dominant eigenvalue.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import toeplitz

from .numerics import RngStream, _generator, cholesky, sample_gaussian, stable_stream_id
from .stats import DataError, LabeledDataset

N_SYNTHETIC_CLASSES = 3
CASE_IDS = tuple(range(1, 11))


@dataclass(frozen=True)
class ClassPopulation:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class SyntheticCaseSpec:
    case_id: int
    d: int
    n_train_per_class: int = 13
    n_valid_per_class: int = 33
    seed: int = 0

    def __post_init__(self):
        _check_case(self.case_id, self.d)
        if self.n_train_per_class < 1 or self.n_valid_per_class < 0:
            raise ValueError("per-class sample counts must be positive")

    def stream(self, realization: int) -> RngStream:
        return RngStream(self.seed, stable_stream_id(self.case_id, self.d, realization))


def _check_case(case_id: int, d: int) -> None:
    if case_id not in CASE_IDS:
        raise ValueError(f"unknown synthetic case {case_id!r}; expected 1..10")
    if d < 2:
        raise ValueError("synthetic cases need d >= 2")
    if case_id in (3, 4) and d < 3:
        raise ValueError("cases 3 and 4 need d >= 3 (their means divide by d/2 - 1)")


def _ramp(values: np.ndarray, d: int) -> np.ndarray:
    return (9.0 * values / (d - 1) + 1.0) ** 2


def make_case_params(case_id: int, d: int, rng=None) -> list[ClassPopulation]:
    """Means and covariances of the three classes of a synthetic case.

    ``rng`` is only consumed by cases 7 to 10, which draw fresh random
    factors ``R_z`` (and, for 8 and 10, fresh means) on every call.
    """
    _check_case(case_id, d)
    i = np.arange(1, d + 1, dtype=float)
    zero = np.zeros(d)
    eye = np.eye(d)

    if case_id == 1:
        m2 = zero.copy()
        m2[0] = 3.0
        m3 = zero.copy()
        m3[-1] = 3.0
        return [ClassPopulation(zero, eye), ClassPopulation(m2, eye), ClassPopulation(m3, eye)]

    if case_id == 2:
        m2 = zero.copy()
        m2[0] = 3.0
        m3 = zero.copy()
        m3[-1] = 4.0
        return [ClassPopulation(zero, eye), ClassPopulation(m2, 2.0 * eye), ClassPopulation(m3, 3.0 * eye)]

    if case_id in (3, 4):
        var = _ramp(i - 1.0, d)
        shape = (d - i) if case_id == 3 else (i - 1.0)
        m2 = 2.5 * np.sqrt(var / d) * shape / (d / 2.0 - 1.0)
        m3 = (-1.0) ** i * m2
        cov = np.diag(var)
        return [ClassPopulation(zero, cov), ClassPopulation(m2, cov.copy()), ClassPopulation(m3, cov.copy())]

    if case_id in (5, 6):
        covs = [np.diag(_ramp(i - 1.0, d)), np.diag(_ramp(d - i, d)), np.diag(_ramp(i - (d - 1) / 2.0, d))]
        if case_id == 5:
            means = [zero, zero.copy(), zero.copy()]
        else:
            m2 = np.full(d, 14.0 / math.sqrt(d))
            means = [zero, m2, (-1.0) ** i * m2]
        return [ClassPopulation(m, c) for m, c in zip(means, covs)]

    if rng is None:
        raise ValueError(f"case {case_id} draws random covariances and needs an rng")
    gen = _generator(rng)
    out = []
    for _ in range(N_SYNTHETIC_CLASSES):
        R = gen.uniform(0.0, 1.0, size=(d, d))
        cov = R.T @ R
        if case_id in (9, 10):
            cov = cov @ cov
        cov = 0.5 * (cov + cov.T)
        mean = gen.standard_normal(d) if case_id in (8, 10) else zero.copy()
        out.append(ClassPopulation(mean, cov))
    return out


LANDSCAPE_KINDS = ("uncorrelated", "toeplitz")


def make_landscape_params(kind: str, d: int = 50) -> list[ClassPopulation]:
    """Two-class populations for the hyperparameter landscape study.

    Both classes share one covariance: the identity (``uncorrelated``) or the
    symmetric Toeplitz matrix with first row ``(d, d-1, ..., 1)``. The means
    are the origin and ``(2.5, 0, ..., 0)``.
    """
    if kind not in LANDSCAPE_KINDS:
        raise ValueError(f"unknown landscape setup {kind!r}; expected one of {LANDSCAPE_KINDS}")
    if d < 1:
        raise ValueError("d must be positive")
    cov = np.eye(d) if kind == "uncorrelated" else toeplitz(np.arange(d, 0, -1, dtype=float))
    m2 = np.zeros(d)
    m2[0] = 2.5
    return [ClassPopulation(np.zeros(d), cov), ClassPopulation(m2, cov.copy())]


def sample_dataset(params: Sequence[ClassPopulation], n_per_class: Sequence[int], rng) -> LabeledDataset:
    """Draw ``n_per_class[z]`` samples from each class population, class by class."""
    if len(params) != len(n_per_class):
        raise ValueError("need one sample count per class")
    gen = _generator(rng)
    blocks, labels = [], []
    for z, (pop, n) in enumerate(zip(params, n_per_class), start=1):
        L = cholesky(pop.cov)
        blocks.append(sample_gaussian(pop.mean, L, int(n), gen))
        labels.append(np.full(int(n), z))
    return LabeledDataset(np.vstack(blocks), np.concatenate(labels), len(params))


def draw_realization(spec: SyntheticCaseSpec, realization: int) -> tuple[LabeledDataset, LabeledDataset | None]:
    """Training and validation sets of one realization, both drawn fresh.

    The validation set is ``None`` when ``n_valid_per_class`` is zero.
    """
    gen = spec.stream(realization).generator()
    params = make_case_params(spec.case_id, spec.d, gen)
    train = sample_dataset(params, [spec.n_train_per_class] * N_SYNTHETIC_CLASSES, gen)
    if spec.n_valid_per_class == 0:
        return train, None
    valid = sample_dataset(params, [spec.n_valid_per_class] * N_SYNTHETIC_CLASSES, gen)
    return train, valid


# -- splitting -------------------------------------------------------------


def train_count(fraction: float, class_size: int) -> int:
    """Round-up rule, guarded against ``fraction * n`` landing a hair above an integer."""
    return max(1, math.ceil(fraction * class_size - 1e-9))


def stratified_split(data: LabeledDataset, fraction: float, rng) -> tuple[LabeledDataset, LabeledDataset]:
    """Per class, ``ceil(fraction * n_z)`` random members go to train and the rest to validation."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"train fraction must lie strictly between 0 and 1, got {fraction!r}")
    gen = _generator(rng)
    train_idx = []
    for z in range(1, data.n_classes + 1):
        members = np.flatnonzero(data.y == z)
        if members.size == 0:
            raise DataError(f"class {z} has no samples to split")
        chosen = gen.permutation(members)[: train_count(fraction, members.size)]
        train_idx.append(chosen)
    train_mask = np.zeros(data.n, dtype=bool)
    train_mask[np.concatenate(train_idx)] = True
    return data.subset(np.flatnonzero(train_mask)), data.subset(np.flatnonzero(~train_mask))


# -- CSV -------------------------------------------------------------------


class CsvFormatError(DataError):
    def __init__(self, message: str, row: int | None = None, column: int | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column


def _label_sort_key(value: str):
    try:
        return (0, float(value), value)
    except ValueError:
        return (1, 0.0, value)


def _read_table(path, label_column, delimiter: str, header: bool):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [(lineno, row) for lineno, row in enumerate(csv.reader(fh, delimiter=delimiter), start=1)
                if row and any(cell.strip() for cell in row)]
    if header:
        if not rows:
            raise CsvFormatError("file has no header row")
        names = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    else:
        names = None
    if not rows:
        raise CsvFormatError("file has no data rows")
    width = len(rows[0][1])
    label_idx = None
    if label_column is not None:
        if width < 2:
            raise CsvFormatError("need at least one feature column and one label column", row=rows[0][0])
        if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
            if names is None or label_column not in names:
                raise CsvFormatError(f"label column {label_column!r} not found in header")
            label_idx = names.index(label_column)
        else:
            label_idx = int(label_column)
            if not -width <= label_idx < width:
                raise CsvFormatError(f"label column index {label_idx} out of range for {width} columns")
            label_idx %= width

    features, raw_labels = [], []
    for lineno, row in rows:
        if len(row) != width:
            raise CsvFormatError(f"expected {width} fields, found {len(row)}", row=lineno)
        vals = []
        for col, cell in enumerate(row):
            if col == label_idx:
                continue
            try:
                v = float(cell)
            except ValueError:
                raise CsvFormatError(f"non-numeric feature value {cell.strip()!r}", row=lineno, column=col) from None
            if not math.isfinite(v):
                raise CsvFormatError(f"non-finite feature value {cell.strip()!r}", row=lineno, column=col)
            vals.append(v)
        features.append(vals)
        if label_idx is not None:
            raw_labels.append(row[label_idx].strip())
    return np.array(features, dtype=float), (raw_labels if label_idx is not None else None)


def load_csv(path, label_column=-1, delimiter: str = ",", header: bool = False) -> LabeledDataset:
    """Read a numeric CSV with one label column.

    ``label_column`` is a 0-based index (negative counts from the end) or a
    header name. Labels are mapped to ``1..C`` in sorted order (numeric
    labels numerically); the original values are kept in ``label_names``.
    Row numbers in errors are 1-based file lines and columns are 0-based.
    """
    X, raw_labels = _read_table(path, label_column, delimiter, header)
    names_sorted = sorted(set(raw_labels), key=_label_sort_key)
    code = {name: z for z, name in enumerate(names_sorted, start=1)}
    y = np.array([code[v] for v in raw_labels], dtype=np.int64)
    return LabeledDataset(X, y, len(names_sorted), tuple(names_sorted))


def load_features_csv(path, delimiter: str = ",", header: bool = False) -> np.ndarray:
    """Read an all-numeric CSV of query rows (no label column)."""
    X, _ = _read_table(path, None, delimiter, header)
    return X


def write_csv(data: LabeledDataset, path, delimiter: str = ",", header: bool = True) -> None:
    """Features followed by the label in the last column."""
    labels = data.label_names
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        if header:
            writer.writerow([f"x{j + 1}" for j in range(data.d)] + ["label"])
        for x, z in zip(data.X, data.y):
            writer.writerow([repr(float(v)) for v in x] + [labels[z - 1] if labels else int(z)])

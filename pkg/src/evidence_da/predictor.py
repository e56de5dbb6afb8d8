"""Fitted classifiers and their closed-form predictive probabilities.

A fitted model caches, per class, the eigenbasis of the sample covariance
(shared with the regularized scatter matrix ``Xi = n C + I / k``) and the
query-independent part ``log W`` of the score. A query then costs one
projection per class.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evidence import HyperParams, Variant, assemble_hyperparameters, solve_hyperparameters
from .numerics import SymEigen, log_gamma_diff
from .stats import ClassSufficientStats, LabeledDataset, compute_class_stats

MODEL_FORMAT = "evidence-da-model"
MODEL_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """A serialized model file is malformed or of an unknown version."""


@dataclass(frozen=True)
class PredictiveDistribution:
    probabilities: np.ndarray
    log_scores: np.ndarray

    @property
    def label(self) -> int:
        # np.argmax returns the first maximum, i.e. ties go to the lowest class
        return int(np.argmax(self.log_scores)) + 1


@dataclass(frozen=True)
class FittedModel:
    """Everything needed to score queries; immutable once built.

    ``exact_model_a`` switches model A from the shared score formula (the
    model B formula with the mean-prior term dropped) to the exact model-A
    posterior predictive, which counts one extra degree of freedom in the
    Student-t exponent and the Gamma ratio.
    """

    variant: Variant
    stats: tuple[ClassSufficientStats, ...]
    hyper: HyperParams
    exact_model_a: bool = False
    label_names: tuple[str, ...] | None = None
    log_w: np.ndarray = field(init=False, repr=False)
    xi_reg: np.ndarray = field(init=False, repr=False)
    _exponents: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        hyper = self.hyper
        if len(self.stats) != hyper.n_classes:
            raise ValueError("one set of statistics per class is required")
        d = self.stats[0].d
        if any(s.d != d for s in self.stats):
            raise ValueError("all classes must share the covariate dimension")
        if self.label_names is not None and len(self.label_names) != len(self.stats):
            raise ValueError("label_names must have one entry per class")
        shift = _dof_shift(self.variant, self.exact_model_a)
        log_w, xi_reg, exponents = [], [], []
        for z, s in enumerate(self.stats):
            lw, reg, expo = _class_normalizer(s, hyper.p[z], hyper.k[z], hyper.r[z], shift)
            if not math.isfinite(lw):
                raise ValueError(f"class {z + 1}: non-finite score normalizer")
            log_w.append(lw)
            xi_reg.append(reg)
            exponents.append(expo)
        object.__setattr__(self, "log_w", _frozen(np.array(log_w)))
        object.__setattr__(self, "xi_reg", _frozen(np.array(xi_reg)))
        object.__setattr__(self, "_exponents", _frozen(np.array(exponents)))

    @property
    def n_classes(self) -> int:
        return len(self.stats)

    def label_name(self, z: int) -> str:
        """Original label of class ``z`` (1-based), or ``str(z)`` when none was recorded."""
        return self.label_names[z - 1] if self.label_names else str(z)

    @property
    def d(self) -> int:
        return self.stats[0].d

    def log_scores(self, X) -> np.ndarray:
        """Unnormalized log predictive scores, shape ``(n_queries, C)``."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.d:
            raise ValueError(f"query dimension {X.shape[1]} does not match model dimension {self.d}")
        out = np.empty((X.shape[0], self.n_classes))
        for z, s in enumerate(self.stats):
            out[:, z] = _class_query_score(s, self.log_w[z], self.xi_reg[z], self._exponents[z],
                                           self.hyper.gamma0[z], X)
        return out[0] if single else out


def _dof_shift(variant, exact_model_a: bool) -> float:
    return 1.0 if (Variant.parse(variant) is Variant.A and exact_model_a) else 0.0


def _class_normalizer(stats: ClassSufficientStats, p: float, k: float, r: float, shift: float):
    """``log W``, the regularized eigenvalues ``n xi + 1/k`` and the Student-t exponent of one class."""
    n, d = stats.n, stats.d
    k, r = float(k), float(r)
    reg = n * stats.xi + 1.0 / k
    if not np.all(reg > 0):
        raise ValueError("regularized scatter is not positive definite")
    a = r + n + shift
    # ln Gamma(a/2) - ln Gamma((a-d)/2) as a telescoping sum of half steps
    gamma_ratio = float(np.sum(log_gamma_diff(0.5 * (a - d) + 0.5 * np.arange(d), 0.5)))
    log_w = math.log(p) + 0.5 * d * math.log(n / (n + 1.0)) + gamma_ratio - 0.5 * float(np.sum(np.log(reg)))
    return log_w, reg, 0.5 * a


def _class_query_score(stats: ClassSufficientStats, log_w: float, reg: np.ndarray, exponent: float,
                       gamma0: float, X: np.ndarray) -> np.ndarray:
    n = stats.n
    u = X - stats.mean
    proj = u @ stats.eigen.eigenvectors
    q = np.sum(proj**2 / reg, axis=1)
    score = log_w - exponent * np.log1p(n / (n + 1.0) * q)
    if gamma0 != 0.0:
        score = score - gamma0 / (2.0 * (n + 1)) * (2.0 * (u @ stats.mean) + np.sum(u * u, axis=1) / (n + 1))
    return score


def class_log_scores(stats: ClassSufficientStats, p: float, k: float, r: float, gamma0: float, X,
                     variant, exact_model_a: bool = False) -> np.ndarray:
    """Unnormalized log scores of one class for each row of ``X``, without building a model."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    log_w, reg, expo = _class_normalizer(stats, p, k, r, _dof_shift(variant, exact_model_a))
    return _class_query_score(stats, log_w, reg, expo, gamma0, X)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def softmax(log_scores) -> np.ndarray:
    s = np.asarray(log_scores, dtype=float)
    e = np.exp(s - np.max(s, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def model_from_stats(stats_by_class: dict[int, ClassSufficientStats], variant, hyper: HyperParams | None = None,
                     exact_model_a: bool = False, label_names=None) -> FittedModel:
    variant = Variant.parse(variant)
    if hyper is None:
        hyper = solve_hyperparameters(stats_by_class, variant)
    stats = tuple(stats_by_class[z] for z in sorted(stats_by_class))
    return FittedModel(variant, stats, hyper, exact_model_a, label_names)


def fit(data: LabeledDataset, variant, exact_model_a: bool = False) -> FittedModel:
    """Per-class statistics, evidence-maximizing hyperparameters and score caches."""
    return model_from_stats(compute_class_stats(data), variant, exact_model_a=exact_model_a,
                            label_names=data.label_names)


def predict(model: FittedModel, x0) -> PredictiveDistribution:
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 1:
        raise ValueError("predict takes a single query vector; use predict_many for batches")
    scores = model.log_scores(x0)
    return PredictiveDistribution(softmax(scores), scores)


def predict_many(model: FittedModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities and log scores for each row of ``X``."""
    scores = model.log_scores(np.atleast_2d(np.asarray(X, dtype=float)))
    return softmax(scores), scores


def classify(model: FittedModel, x0) -> int:
    return predict(model, x0).label


def classify_many(model: FittedModel, X) -> np.ndarray:
    scores = model.log_scores(np.atleast_2d(np.asarray(X, dtype=float)))
    return np.argmax(scores, axis=1) + 1


def with_hyperparameters(model: FittedModel, hyper: HyperParams) -> FittedModel:
    return FittedModel(model.variant, model.stats, hyper, model.exact_model_a, model.label_names)


# -- serialization ---------------------------------------------------------


def model_to_dict(model: FittedModel) -> dict:
    h = model.hyper
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "variant": model.variant.value,
        "exact_model_a": model.exact_model_a,
        "d": model.d,
        "n_classes": model.n_classes,
        "label_names": list(model.label_names) if model.label_names else None,
        "classes": [
            {
                "n": s.n,
                "p": float(h.p[z]),
                "k": float(h.k[z]),
                "r": float(h.r[z]),
                "gamma0": float(h.gamma0[z]),
                "mean": s.mean.tolist(),
                "cov_eigenvalues": s.eigen.eigenvalues.tolist(),
                "cov_eigenvectors": s.eigen.eigenvectors.tolist(),
            }
            for z, s in enumerate(model.stats)
        ],
    }


def model_from_dict(payload: dict) -> FittedModel:
    if not isinstance(payload, dict):
        raise ModelFormatError("model file must hold a JSON object")
    try:
        if payload.get("format") != MODEL_FORMAT:
            raise ModelFormatError(f"not a model file (format={payload.get('format')!r})")
        if payload.get("version") != MODEL_FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model version {payload.get('version')!r}")
        variant = Variant.parse(payload["variant"])
        d = int(payload["d"])
        classes = payload["classes"]
        if len(classes) != int(payload["n_classes"]) or not classes:
            raise ModelFormatError("class count does not match the class list")
        stats = []
        for entry in classes:
            vals = np.array(entry["cov_eigenvalues"], dtype=float)
            vecs = np.array(entry["cov_eigenvectors"], dtype=float)
            mean = np.array(entry["mean"], dtype=float)
            if mean.shape != (d,) or vals.shape != (d,) or vecs.shape != (d, d):
                raise ModelFormatError("class arrays do not match the model dimension")
            eigen = SymEigen(vals, vecs)
            cov = eigen.reconstruct()
            for a in (mean, cov, vals, vecs):
                a.setflags(write=False)
            stats.append(ClassSufficientStats(int(entry["n"]), mean, cov, eigen))
        hyper = HyperParams(
            variant=variant,
            p=np.array([c["p"] for c in classes], dtype=float),
            k=np.array([c["k"] for c in classes], dtype=float),
            r=np.array([c["r"] for c in classes], dtype=float),
            gamma0=np.array([c["gamma0"] for c in classes], dtype=float),
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from exc
    names = payload.get("label_names")
    if names is not None:
        names = tuple(str(v) for v in names)
        if len(names) != len(stats):
            raise ModelFormatError("label_names must have one entry per class")
    return FittedModel(variant, tuple(stats), hyper, bool(payload.get("exact_model_a", False)), names)


def save_model(model: FittedModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def load_model(path) -> FittedModel:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    return model_from_dict(payload)


__all__ = [
    "FittedModel",
    "ModelFormatError",
    "PredictiveDistribution",
    "assemble_hyperparameters",
    "class_log_scores",
    "classify",
    "classify_many",
    "fit",
    "load_model",
    "model_from_dict",
    "model_from_stats",
    "model_to_dict",
    "predict",
    "predict_many",
    "save_model",
    "softmax",
    "with_hyperparameters",
]

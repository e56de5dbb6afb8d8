"""Benchmark drivers: synthetic and real-data error rates, LOOCV surfaces, overfitting curves.

Every driver splits its work into independent tasks. Each task derives its
random stream from the seed and its own index, so serial and parallel runs
produce identical reports.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .datagen import (
    SyntheticCaseSpec,
    draw_realization,
    make_landscape_params,
    sample_dataset,
    stratified_split,
    train_count,
)
from .evidence import (
    ClassSolution,
    Variant,
    assemble_hyperparameters,
    gamma0,
    k_upper_limit,
    per_class_objective,
    solve_class,
    solve_r_given_k,
    stationarity_residuals,
)
from .numerics import NumericsError, RngStream, stable_stream_id
from .predictor import class_log_scores, classify_many, fit, model_from_stats
from .stats import DataError, LabeledDataset, compute_class_stats, downdate_stats

DEFAULT_SEED = 1
TOOL_NAME = "evidence-da"
# errors that mark a single realization or fold as failed without aborting the run
RECOVERABLE = (NumericsError, DataError, ValueError, ArithmeticError)
_MAX_FAILURE_MESSAGES = 5


def _variants(variants) -> tuple[Variant, ...]:
    if isinstance(variants, (str, Variant)):
        variants = [variants]
    out = tuple(dict.fromkeys(Variant.parse(v) for v in variants))
    if not out:
        raise ValueError("at least one model variant is required")
    return out


def run_tasks(fn: Callable, tasks: Sequence, jobs: int = 1) -> list:
    """Apply ``fn`` to every task, in-process or on a pool of ``jobs`` workers.

    Results come back in task order regardless of ``jobs``.
    """
    if jobs is None or jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    workers = min(jobs, len(tasks))
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


def _std(values: Sequence[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def _mean(values: Sequence[float]) -> float | None:
    return float(np.mean(values)) if len(values) else None


# -- reports ---------------------------------------------------------------


@dataclass
class Report:
    """``meta`` block plus one flat-ish dict per experiment."""

    command: str
    meta: dict
    experiments: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"meta": {"tool": TOOL_NAME, "version": __version__, "command": self.command, **self.meta},
                "experiments": self.experiments}

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.as_dict()), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        rows = [_flatten(e) for e in self.experiments]
        columns: list[str] = []
        for row in rows:
            for key in row:
                if key not in columns:
                    columns.append(key)
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
        return buf.getvalue()

    def render(self, fmt: str) -> str:
        if fmt == "json":
            return self.to_json()
        if fmt == "csv":
            return self.to_csv()
        raise ValueError(f"unknown report format {fmt!r}")


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, Variant):
        return value.value
    return value


def _flatten(exp: dict) -> dict:
    out = {}
    for key, value in exp.items():
        value = _jsonable(value)
        if isinstance(value, dict):
            value = ";".join(f"{k}={v}" for k, v in sorted(value.items()))
        elif isinstance(value, list):
            if value and isinstance(value[0], list):
                value = json.dumps(value)
            else:
                value = ";".join("" if v is None else str(v) for v in value)
        out[key] = value
    return out


# -- synthetic benchmark ---------------------------------------------------


@dataclass(frozen=True)
class _SyntheticTask:
    case_id: int
    d: int
    n_train: int
    n_valid: int
    seed: int
    realization: int
    variants: tuple[Variant, ...]


def _interior_residuals(stats_by_class, solutions, variant) -> tuple[float, float]:
    worst_k = worst_r = 0.0
    for z, sol in zip(sorted(stats_by_class), solutions):
        if sol.kind != "interior":
            continue
        rk, rr = stationarity_residuals(stats_by_class[z], sol.k, sol.r, variant)
        worst_k = max(worst_k, abs(rk) / sol.r)
        worst_r = max(worst_r, abs(rr))
    return worst_k, worst_r


def _synthetic_task(task: _SyntheticTask) -> dict:
    spec = SyntheticCaseSpec(task.case_id, task.d, task.n_train, task.n_valid, task.seed)
    out = {}
    try:
        train, valid = draw_realization(spec, task.realization)
        stats = compute_class_stats(train)
    except RECOVERABLE as exc:
        return {v: {"failed": f"{type(exc).__name__}: {exc}"} for v in task.variants}
    for v in task.variants:
        try:
            model = model_from_stats(stats, v)
            wrong = int(np.sum(classify_many(model, valid.X) != valid.y))
            sols = model.hyper.solutions
            res_k, res_r = _interior_residuals(stats, sols, v)
            out[v] = {
                "error": 100.0 * wrong / valid.n,
                "accuracy": 100.0 * (valid.n - wrong) / valid.n,
                "k": [s.k for s in sols],
                "r": [s.r for s in sols],
                "kinds": [s.kind for s in sols],
                "unbounded": sum("unbounded-k" in s.flags for s in sols),
                "res_k": res_k,
                "res_r": res_r,
            }
        except RECOVERABLE as exc:
            out[v] = {"failed": f"{type(exc).__name__}: {exc}"}
    return out


def _summarize_runs(runs: list[dict]) -> dict:
    ok = [r for r in runs if "failed" not in r]
    failed = [r["failed"] for r in runs if "failed" in r]
    errors = [r["error"] for r in ok]
    accs = [r["accuracy"] for r in ok]
    summary = {
        "realizations": len(ok),
        "failed_realizations": len(failed),
        "mean_error_pct": _mean(errors),
        "std_error_pct": _std(errors),
        "mean_accuracy_pct": _mean(accs),
    }
    if ok:
        if not math.isclose(summary["mean_error_pct"] + summary["mean_accuracy_pct"], 100.0, abs_tol=1e-9):
            raise AssertionError("mean error and mean accuracy must add up to 100%")
        k = np.array([r["k"] for r in ok])
        rr = np.array([r["r"] for r in ok])
        summary["median_k"] = np.median(k, axis=0).tolist()
        summary["median_r"] = np.median(rr, axis=0).tolist()
        kinds: dict[str, int] = {}
        for r in ok:
            for kind in r["kinds"]:
                kinds[kind] = kinds.get(kind, 0) + 1
        summary["solution_kinds"] = dict(sorted(kinds.items()))
        summary["unbounded_k_solutions"] = sum(r["unbounded"] for r in ok)
        summary["max_interior_residual_k"] = max(r["res_k"] for r in ok)
        summary["max_interior_residual_r"] = max(r["res_r"] for r in ok)
    if failed:
        summary["failures"] = failed[:_MAX_FAILURE_MESSAGES]
    return summary


def run_synthetic_benchmark(cases: Iterable[int], dims: Iterable[int], n_train_per_class: int = 13,
                            n_valid_per_class: int = 33, realizations: int = 100, variants=("A", "B"),
                            seed: int = DEFAULT_SEED, jobs: int = 1, timings: bool = False) -> Report:
    """Mean and spread of the validation error over fresh synthetic realizations.

    Both variants see the same realizations. Realization streams depend on
    ``(seed, case, d, realization)`` only.
    """
    cases, dims, variants = list(cases), list(dims), _variants(variants)
    if realizations < 1 or n_train_per_class < 1 or n_valid_per_class < 1:
        raise ValueError("realizations and per-class sample counts must be positive")
    for c in cases:
        for d in dims:
            SyntheticCaseSpec(c, d)  # validates the combination up front
    report = Report("bench-synthetic", {
        "seed": seed,
        "flags": {"cases": cases, "dims": dims, "n_train_per_class": n_train_per_class,
                  "n_valid_per_class": n_valid_per_class, "realizations": realizations,
                  "variants": [v.value for v in variants]},
    })
    for c in cases:
        for d in dims:
            start = time.perf_counter()
            tasks = [_SyntheticTask(c, d, n_train_per_class, n_valid_per_class, seed, i, variants)
                     for i in range(realizations)]
            results = run_tasks(_synthetic_task, tasks, jobs)
            elapsed = time.perf_counter() - start
            for v in variants:
                exp = {"case": c, "d": d, "variant": v.value, "n_train_per_class": n_train_per_class,
                       "n_valid_per_class": n_valid_per_class}
                exp.update(_summarize_runs([r[v] for r in results]))
                if timings:
                    exp["seconds"] = elapsed
                report.experiments.append(exp)
    return report


# -- real-data benchmark ---------------------------------------------------


def majority_baseline_error(data: LabeledDataset) -> float:
    """Error (%) of always predicting the largest class of the full dataset."""
    counts = data.class_counts()
    return 100.0 * (1.0 - counts.max() / counts.sum())


@dataclass(frozen=True)
class _RealTask:
    data: LabeledDataset
    fraction: float
    seed: int
    repeat: int
    variants: tuple[Variant, ...]


def _real_task(task: _RealTask) -> dict:
    stream = RngStream(task.seed, stable_stream_id("split", repr(float(task.fraction)), task.repeat))
    train, valid = stratified_split(task.data, task.fraction, stream)
    out = {}
    try:
        stats = compute_class_stats(train)
    except RECOVERABLE as exc:
        return {v: {"failed": f"{type(exc).__name__}: {exc}"} for v in task.variants}
    for v in task.variants:
        try:
            model = model_from_stats(stats, v)
            wrong = int(np.sum(classify_many(model, valid.X) != valid.y))
            sols = model.hyper.solutions
            res_k, res_r = _interior_residuals(stats, sols, v)
            out[v] = {"error": 100.0 * wrong / valid.n, "accuracy": 100.0 * (valid.n - wrong) / valid.n,
                      "k": [s.k for s in sols], "r": [s.r for s in sols], "kinds": [s.kind for s in sols],
                      "unbounded": sum("unbounded-k" in s.flags for s in sols), "res_k": res_k, "res_r": res_r}
        except RECOVERABLE as exc:
            out[v] = {"failed": f"{type(exc).__name__}: {exc}"}
    return out


def run_real_benchmark(data: LabeledDataset, fraction: float, repeats: int = 20, variants=("A", "B"),
                       seed: int = DEFAULT_SEED, jobs: int = 1, dataset_name: str = "data",
                       timings: bool = False) -> Report:
    """Repeated stratified train/validation splits of one labeled dataset."""
    variants = _variants(variants)
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"train fraction must lie strictly between 0 and 1, got {fraction!r}")
    if repeats < 1:
        raise ValueError("repeats must be positive")
    counts = data.class_counts()
    train_counts = [train_count(fraction, int(c)) for c in counts]
    if all(t >= c for t, c in zip(train_counts, counts)):
        raise ValueError("the split leaves no validation samples")
    report = Report("bench-real", {
        "seed": seed,
        "flags": {"dataset": dataset_name, "fraction": fraction, "repeats": repeats,
                  "variants": [v.value for v in variants]},
    })
    start = time.perf_counter()
    tasks = [_RealTask(data, fraction, seed, i, variants) for i in range(repeats)]
    results = run_tasks(_real_task, tasks, jobs)
    elapsed = time.perf_counter() - start
    for v in variants:
        exp = {"dataset": dataset_name, "d": data.d, "variant": v.value, "fraction": fraction,
               "class_sizes": counts.tolist(), "train_counts": train_counts,
               "baseline_error_pct": majority_baseline_error(data)}
        summary = _summarize_runs([r[v] for r in results])
        summary["repeats"] = summary.pop("realizations")
        summary["failed_repeats"] = summary.pop("failed_realizations")
        exp.update(summary)
        if timings:
            exp["seconds"] = elapsed
        report.experiments.append(exp)
    return report


# -- leave-one-out ---------------------------------------------------------


@dataclass(frozen=True)
class LoocvResult:
    accuracy: float
    n_correct: int
    n_evaluated: int
    skipped: tuple[int, ...] = ()
    unbounded_k_folds: int = 0


def _fixed_k_solution(stats, k: float, variant) -> ClassSolution:
    r = solve_r_given_k(stats, k, variant)
    return ClassSolution(float(k), r, per_class_objective(stats, k, r, variant), "fixed-k")


def loocv_accuracy(data: LabeledDataset, variant, hyper_override: Sequence[float] | None = None,
                   exact_model_a: bool = False) -> LoocvResult:
    """Leave-one-out accuracy using per-fold statistic downdates.

    Each fold removes one sample from its class, re-solves that class's
    hyperparameters (or only ``r`` when ``hyper_override`` fixes ``k`` per
    class) and recomputes the class priors and mean-prior precisions. Folds
    that would empty a class are skipped and listed in ``skipped``.
    """
    variant = Variant.parse(variant)
    stats = compute_class_stats(data)
    labels = sorted(stats)
    if hyper_override is not None:
        if len(hyper_override) != len(labels):
            raise ValueError("hyper_override needs one k per class")
        base = {z: _fixed_k_solution(stats[z], k, variant) for z, k in zip(labels, hyper_override)}
        resolve = lambda z, s: _fixed_k_solution(s, hyper_override[z - 1], variant)
    else:
        base = {z: solve_class(stats[z], variant) for z in labels}
        resolve = lambda z, s: solve_class(s, variant)

    correct = 0
    unbounded = 0
    skipped = []
    for i in range(data.n):
        z = int(data.y[i])
        if stats[z].n < 2:
            skipped.append(i)
            continue
        fold = dict(stats)
        fold[z] = downdate_stats(stats[z], data.X[i])
        sols = [resolve(w, fold[w]) if w == z else base[w] for w in labels]
        unbounded += any("unbounded-k" in s.flags for s in sols)
        model = model_from_stats(fold, variant, assemble_hyperparameters(fold, variant, sols), exact_model_a)
        correct += int(classify_many(model, data.X[i])[0] == z)
    evaluated = data.n - len(skipped)
    accuracy = correct / evaluated if evaluated else float("nan")
    return LoocvResult(accuracy, correct, evaluated, tuple(skipped), unbounded)


@dataclass(frozen=True)
class AccuracySurface:
    """LOOCV accuracy over a ``G x G`` grid of per-class seed scales.

    ``accuracy[i, j]`` belongs to ``k1_grid[i]`` and ``k2_grid[j]``.
    """

    k1_grid: np.ndarray
    k2_grid: np.ndarray
    accuracy: np.ndarray
    k_max: tuple[float, float]
    evidence_k: tuple[float, float]
    skipped_folds: tuple[int, ...] = ()

    def argmax_fractions(self) -> tuple[float, float]:
        i, j = np.unravel_index(int(np.argmax(self.accuracy)), self.accuracy.shape)
        return float(self.k1_grid[i] / self.k_max[0]), float(self.k2_grid[j] / self.k_max[1])

    def best_fraction_ranges(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """Smallest and largest grid fractions among all cells that attain the maximum."""
        top = np.argwhere(self.accuracy == self.accuracy.max())
        f1 = self.k1_grid[top[:, 0]] / self.k_max[0]
        f2 = self.k2_grid[top[:, 1]] / self.k_max[1]
        return (float(f1.min()), float(f1.max())), (float(f2.min()), float(f2.max()))

    def evidence_fractions(self) -> tuple[float, float]:
        return self.evidence_k[0] / self.k_max[0], self.evidence_k[1] / self.k_max[1]


def k_grid(k_max: float, size: int) -> np.ndarray:
    """``size`` equally spaced values ``k_max * j / size`` for ``j = 1..size``."""
    return k_max * np.arange(1, size + 1) / size


@dataclass(frozen=True)
class _GridFold:
    data: LabeledDataset
    index: int
    variant: Variant
    grids: tuple[np.ndarray, np.ndarray]
    base_r: tuple[np.ndarray, np.ndarray]
    exact_model_a: bool


def _class_scores_over_grid(stats, p, grid, r_values, variant, x, exact) -> np.ndarray:
    g0 = gamma0(stats) if variant is Variant.B else 0.0
    return np.array([class_log_scores(stats, p, k, r, g0, x, variant, exact)[0] for k, r in zip(grid, r_values)])


def _grid_fold(task: _GridFold) -> np.ndarray | None:
    data, i, variant = task.data, task.index, task.variant
    stats = compute_class_stats(data)
    z = int(data.y[i])
    if stats[z].n < 2:
        return None
    fold = dict(stats)
    fold[z] = downdate_stats(stats[z], data.X[i])
    n_fold = data.n - 1
    x = data.X[i]
    scores = []
    for w in (1, 2):
        grid = task.grids[w - 1]
        if w == z:
            r_values = np.array([solve_r_given_k(fold[w], k, variant) for k in grid])
        else:
            r_values = task.base_r[w - 1]
        scores.append(_class_scores_over_grid(fold[w], fold[w].n / n_fold, grid, r_values, variant, x,
                                              task.exact_model_a))
    s1, s2 = scores
    # ties go to class 1, matching classify
    if z == 1:
        return s1[:, None] >= s2[None, :]
    return s2[None, :] > s1[:, None]


def loocv_grid(data: LabeledDataset, grid_size: int = 100, variant="A", jobs: int = 1,
               exact_model_a: bool = False) -> AccuracySurface:
    """LOOCV accuracy on a grid of ``(k_1, k_2)`` with ``r`` solved from the evidence at each ``k``.

    Class ``z`` uses ``k`` values ``k_max,z * j / G`` for ``j = 1..G``, where
    ``k_max,z`` is the largest ``k`` with evidence-optimal ``r > d - 1`` or a
    data-scaled fallback when no such limit exists.
    """
    variant = Variant.parse(variant)
    if data.n_classes != 2:
        raise ValueError(f"the accuracy surface needs exactly two classes, got {data.n_classes}")
    if grid_size < 1:
        raise ValueError("grid size must be positive")
    stats = compute_class_stats(data)
    k_max = tuple(k_upper_limit(stats[z], variant) for z in (1, 2))
    grids = tuple(k_grid(k, grid_size) for k in k_max)
    base_r = tuple(np.array([solve_r_given_k(stats[z], k, variant) for k in grids[z - 1]]) for z in (1, 2))
    evidence_k = tuple(solve_class(stats[z], variant).k for z in (1, 2))
    tasks = [_GridFold(data, i, variant, grids, base_r, exact_model_a) for i in range(data.n)]
    results = run_tasks(_grid_fold, tasks, jobs)
    correct = np.zeros((grid_size, grid_size))
    skipped = []
    for i, res in enumerate(results):
        if res is None:
            skipped.append(i)
        else:
            correct += res
    evaluated = data.n - len(skipped)
    accuracy = correct / evaluated if evaluated else np.full((grid_size, grid_size), np.nan)
    return AccuracySurface(grids[0], grids[1], accuracy, k_max, evidence_k, tuple(skipped))


def landscape_dataset(kind: str, d: int = 50, n_per_class: int = 50, seed: int = DEFAULT_SEED) -> LabeledDataset:
    """One realization of the two-class landscape setup."""
    stream = RngStream(seed, stable_stream_id("landscape", kind, d, n_per_class))
    return sample_dataset(make_landscape_params(kind, d), [n_per_class, n_per_class], stream)


def surface_report(surface: AccuracySurface, meta: dict, include_matrix: bool = True) -> Report:
    (lo1, hi1), (lo2, hi2) = surface.best_fraction_ranges()
    e1, e2 = surface.evidence_fractions()
    exp = {
        "k_max": list(surface.k_max),
        "evidence_k": list(surface.evidence_k),
        "evidence_k_fraction": [e1, e2],
        "best_accuracy": float(surface.accuracy.max()),
        "best_k1_fraction_range": [lo1, hi1],
        "best_k2_fraction_range": [lo2, hi2],
        "skipped_folds": len(surface.skipped_folds),
    }
    if include_matrix:
        exp["k1_grid"] = surface.k1_grid
        exp["k2_grid"] = surface.k2_grid
        exp["accuracy"] = surface.accuracy
    return Report("loocv-grid", meta, [exp])


# -- overfitting curve -----------------------------------------------------


@dataclass(frozen=True)
class _OverfitTask:
    case_id: int
    d: int
    n_per_class: int
    seed: int
    realization: int
    variants: tuple[Variant, ...]


def _overfit_task(task: _OverfitTask) -> dict:
    spec = SyntheticCaseSpec(task.case_id, task.d, task.n_per_class, 0, task.seed)
    out = {}
    try:
        train, _ = draw_realization(spec, task.realization)
    except RECOVERABLE as exc:
        return {v: {"failed": f"{type(exc).__name__}: {exc}"} for v in task.variants}
    for v in task.variants:
        try:
            model = fit(train, v)
            train_acc = float(np.mean(classify_many(model, train.X) == train.y))
            loo = loocv_accuracy(train, v)
            out[v] = {"train": 100.0 * train_acc, "valid": 100.0 * loo.accuracy,
                      "unbounded": sum("unbounded-k" in s.flags for s in model.hyper.solutions),
                      "unbounded_folds": loo.unbounded_k_folds}
        except RECOVERABLE as exc:
            out[v] = {"failed": f"{type(exc).__name__}: {exc}"}
    return out


def overfit_curve(case_id: int, dims: Iterable[int], n_per_class: int = 13, realizations: int = 250,
                  variants=("A", "B"), seed: int = DEFAULT_SEED, jobs: int = 1, timings: bool = False) -> Report:
    """In-sample (training) and leave-one-out (validation) accuracy against dimension."""
    dims, variants = list(dims), _variants(variants)
    if realizations < 1 or n_per_class < 2:
        raise ValueError("need at least one realization and two samples per class")
    for d in dims:
        SyntheticCaseSpec(case_id, d)
    report = Report("overfit-curve", {
        "seed": seed,
        "flags": {"case": case_id, "dims": dims, "n_per_class": n_per_class, "realizations": realizations,
                  "variants": [v.value for v in variants]},
    })
    for d in dims:
        start = time.perf_counter()
        tasks = [_OverfitTask(case_id, d, n_per_class, seed, i, variants) for i in range(realizations)]
        results = run_tasks(_overfit_task, tasks, jobs)
        elapsed = time.perf_counter() - start
        for v in variants:
            runs = [r[v] for r in results]
            ok = [r for r in runs if "failed" not in r]
            failed = [r["failed"] for r in runs if "failed" in r]
            exp = {
                "case": case_id, "d": d, "variant": v.value, "n_per_class": n_per_class,
                "realizations": len(ok), "failed_realizations": len(failed),
                "train_accuracy_pct": _mean([r["train"] for r in ok]),
                "train_accuracy_std_pct": _std([r["train"] for r in ok]),
                "validation_accuracy_pct": _mean([r["valid"] for r in ok]),
                "validation_accuracy_std_pct": _std([r["valid"] for r in ok]),
                "random_guess_accuracy_pct": 100.0 / 3.0,
                "unbounded_k_fits": sum(r["unbounded"] for r in ok),
                "unbounded_k_folds": sum(r["unbounded_folds"] for r in ok),
            }
            if failed:
                exp["failures"] = failed[:_MAX_FAILURE_MESSAGES]
            if timings:
                exp["seconds"] = elapsed
            report.experiments.append(exp)
    return report

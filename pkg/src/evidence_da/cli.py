"""Command-line entry point: ``evidence-da <subcommand> [options]``.

Every subcommand writes its result to ``--out`` (or stdout) as JSON or CSV.
Failures print a JSON object ``{"error": {"type": ..., "message": ...}}``
on stderr and exit with status 1; usage errors exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import CASE_IDS, LANDSCAPE_KINDS, load_csv, load_features_csv
from .evidence import Variant
from .harness import (
    DEFAULT_SEED,
    Report,
    landscape_dataset,
    loocv_grid,
    overfit_curve,
    run_real_benchmark,
    run_synthetic_benchmark,
    surface_report,
)
from .predictor import fit, load_model, predict_many, save_model


def _add_common(p: argparse.ArgumentParser, multi_variant: bool, default_variant: str = "B"):
    if multi_variant:
        p.add_argument("--variant", choices=["A", "B"], action="append", default=None,
                       help="model variant; repeat to run several (default: A and B)")
    else:
        p.add_argument("--variant", choices=["A", "B"], default=default_variant,
                       help=f"model variant (default: {default_variant})")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"random seed (default: {DEFAULT_SEED})")
    p.add_argument("--out", type=Path, default=None, help="output file (default: stdout)")
    p.add_argument("--format", choices=["json", "csv"], default="json", help="output format (default: json)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default: 1)")


def _add_csv_input(p: argparse.ArgumentParser, required: bool = True, with_label: bool = True):
    p.add_argument("--data", type=Path, required=required, help="input CSV file")
    if with_label:
        p.add_argument("--label-column", default="-1",
                       help="label column: 0-based index (negative from the end) or header name (default: -1)")
    p.add_argument("--delimiter", default=",", help="field delimiter (default: ',')")
    p.add_argument("--header", action="store_true", help="first row is a header")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evidence-da",
        description="Bayesian Gaussian discriminant analysis with evidence-maximized hyperparameters.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model on a labeled CSV and save it")
    _add_csv_input(p)
    _add_common(p, multi_variant=False)
    p.add_argument("--model", type=Path, required=True, help="where to write the fitted model (JSON)")
    p.add_argument("--exact-model-a", action="store_true",
                   help="score model A with its exact posterior predictive")

    p = sub.add_parser("predict", help="class probabilities for the rows of a CSV")
    p.add_argument("--model", type=Path, required=True, help="fitted model file")
    _add_csv_input(p, with_label=False)
    p.add_argument("--label-column", default=None,
                   help="label column to ignore for scoring and use for an accuracy summary")
    _add_common(p, multi_variant=False)

    p = sub.add_parser("bench-synthetic", help="error rates on the synthetic benchmark cases")
    p.add_argument("--cases", type=int, nargs="+", default=[1, 2, 7, 8], choices=CASE_IDS, metavar="CASE")
    p.add_argument("--dims", type=int, nargs="+", default=[10, 50], metavar="D")
    p.add_argument("--n-train", type=int, default=13, help="training samples per class (default: 13)")
    p.add_argument("--n-valid", type=int, default=33, help="validation samples per class (default: 33)")
    p.add_argument("--realizations", type=int, default=100)
    p.add_argument("--timings", action="store_true", help="include wall-clock seconds (not reproducible)")
    _add_common(p, multi_variant=True)

    p = sub.add_parser("bench-real", help="repeated stratified splits of a labeled CSV")
    _add_csv_input(p)
    p.add_argument("--fraction", type=float, default=0.10, help="training fraction per class (default: 0.10)")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--name", default=None, help="dataset name in the report (default: file stem)")
    p.add_argument("--timings", action="store_true", help="include wall-clock seconds (not reproducible)")
    _add_common(p, multi_variant=True)

    p = sub.add_parser("loocv-grid", help="LOOCV accuracy over a (k1, k2) grid for two-class data")
    _add_csv_input(p, required=False)
    p.add_argument("--setup", choices=LANDSCAPE_KINDS, default=None,
                   help="generate the synthetic two-class landscape data instead of reading --data")
    p.add_argument("--d", type=int, default=50, help="dimension of the generated setup (default: 50)")
    p.add_argument("--n-per-class", type=int, default=50, help="samples per class of the generated setup")
    p.add_argument("--grid", type=int, default=100, help="grid points per axis (default: 100)")
    p.add_argument("--summary-only", action="store_true", help="omit the accuracy matrix from the report")
    _add_common(p, multi_variant=False, default_variant="A")

    p = sub.add_parser("overfit-curve", help="training and LOOCV accuracy against dimension")
    p.add_argument("--case", type=int, default=1, choices=CASE_IDS)
    p.add_argument("--dims", type=int, nargs="+", default=[10, 25, 50, 100, 150], metavar="D")
    p.add_argument("--n-per-class", type=int, default=13)
    p.add_argument("--realizations", type=int, default=250)
    p.add_argument("--timings", action="store_true", help="include wall-clock seconds (not reproducible)")
    _add_common(p, multi_variant=True)
    return parser


def _label_arg(value):
    if value is None:
        return None
    return int(value) if value.lstrip("-").isdigit() else value


def _variants(args) -> list[str]:
    return args.variant or ["A", "B"]


def _cmd_fit(args) -> Report:
    data = load_csv(args.data, _label_arg(args.label_column), args.delimiter, args.header)
    model = fit(data, args.variant, exact_model_a=args.exact_model_a)
    save_model(model, args.model)
    report = Report("fit", {"seed": args.seed, "flags": {"data": str(args.data), "variant": args.variant,
                                                          "model": str(args.model)}})
    for z, sol in enumerate(model.hyper.solutions, start=1):
        report.experiments.append({
            "class": model.label_name(z), "n": model.stats[z - 1].n, "p": model.hyper.p[z - 1],
            "k": sol.k, "r": sol.r, "gamma0": model.hyper.gamma0[z - 1], "solution": sol.kind,
            "flags": list(sol.flags),
        })
    return report


def _cmd_predict(args) -> Report:
    model = load_model(args.model)
    labels = None
    if args.label_column is not None:
        data = load_csv(args.data, _label_arg(args.label_column), args.delimiter, args.header)
        X = data.X
        labels = [data.label_names[z - 1] for z in data.y]
    else:
        X = load_features_csv(args.data, args.delimiter, args.header)
    probs, _ = predict_many(model, X)
    predicted = np.argmax(probs, axis=1) + 1
    meta = {"seed": args.seed, "flags": {"model": str(args.model), "data": str(args.data)}}
    if labels is not None:
        hits = sum(model.label_name(int(z)) == t for z, t in zip(predicted, labels))
        meta["accuracy"] = hits / len(labels)
    report = Report("predict", meta)
    for i, (row, z) in enumerate(zip(probs, predicted)):
        exp = {"row": i, "predicted": model.label_name(int(z))}
        if labels is not None:
            exp["label"] = labels[i]
        for c in range(model.n_classes):
            exp[f"p_{model.label_name(c + 1)}"] = float(row[c])
        report.experiments.append(exp)
    return report


def _cmd_bench_synthetic(args) -> Report:
    return run_synthetic_benchmark(args.cases, args.dims, args.n_train, args.n_valid, args.realizations,
                                   _variants(args), args.seed, args.jobs, args.timings)


def _cmd_bench_real(args) -> Report:
    data = load_csv(args.data, _label_arg(args.label_column), args.delimiter, args.header)
    name = args.name or args.data.stem
    return run_real_benchmark(data, args.fraction, args.repeats, _variants(args), args.seed, args.jobs, name,
                              args.timings)


def _cmd_loocv_grid(args) -> Report:
    if (args.data is None) == (args.setup is None):
        raise ValueError("give exactly one of --data or --setup")
    if args.setup is not None:
        data = landscape_dataset(args.setup, args.d, args.n_per_class, args.seed)
        source = {"setup": args.setup, "d": args.d, "n_per_class": args.n_per_class}
    else:
        data = load_csv(args.data, _label_arg(args.label_column), args.delimiter, args.header)
        source = {"data": str(args.data)}
    surface = loocv_grid(data, args.grid, args.variant, args.jobs)
    meta = {"seed": args.seed, "flags": {**source, "grid": args.grid, "variant": args.variant}}
    return surface_report(surface, meta, include_matrix=not args.summary_only)


def _cmd_overfit(args) -> Report:
    return overfit_curve(args.case, args.dims, args.n_per_class, args.realizations, _variants(args), args.seed,
                         args.jobs, args.timings)


_COMMANDS = {
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "bench-synthetic": _cmd_bench_synthetic,
    "bench-real": _cmd_bench_real,
    "loocv-grid": _cmd_loocv_grid,
    "overfit-curve": _cmd_overfit,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        report = _COMMANDS[args.command](args)
        text = report.render(args.format)
        if args.out is None:
            sys.stdout.write(text)
        else:
            args.out.write_text(text, encoding="utf-8")
    except Exception as exc:  # every failure becomes a structured error
        err = {"error": {"type": type(exc).__name__, "message": str(exc), "command": args.command}}
        sys.stderr.write(json.dumps(err) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: ``mlsvm train|predict|cv|gen|knn``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from .config import (
    COARSENING_MODES, DISAGGREGATION_MODES, METRIC_RULES, VALIDATION_STRATEGIES,
    VOTING_RULES, WEIGHT_SCHEMES, Config, ConfigError,
)
from .data import Dataset, fit_normalization, gen_imbalanced_mixture, gen_synthetic, load_csv, save_csv
from .driver import (
    PHASES, TrainedClassifier, cross_validate, load_model, mlsvm_predict, mlsvm_train, save_model,
)
from .graph import cached_knn_graph
from .modelsel import compute_metrics

# keys whose values depend on wall-clock time or on the worker count
TIMING_KEYS = frozenset({
    "seconds", "timings", "total_seconds", "us_per_point", "us_per_value",
    "fold_seconds", "fold_timings", "runtime",
})

# (flag, Config field, type, choices)
PARAM_FLAGS = [
    ("--Q", "Q", float, None),
    ("--eta", "eta", float, None),
    ("--caliber", "caliber", int, None),
    ("--theta", "theta", float, None),
    ("--k-nn", "k_nn", int, None),
    ("--knn-mode", "knn_mode", str, ("auto", "exact", "approximate")),
    ("--m-pos", "m_pos", int, None),
    ("--m-neg", "m_neg", int, None),
    ("--coarsest-size", "coarsest_size", int, None),
    ("--q-t", "q_t", int, None),
    ("--part-size", "part_size", int, None),
    ("--coarsening", "coarsening", str, COARSENING_MODES),
    ("--validation", "validation", str, VALIDATION_STRATEGIES),
    ("--val-fraction", "val_fraction", float, None),
    ("--cv-folds", "cv_folds", int, None),
    ("--disaggregation", "disaggregation", str, DISAGGREGATION_MODES),
    ("--disagg-distance", "disagg_distance", int, None),
    ("--disagg-budget", "disagg_budget", int, None),
    ("--iis-neighbors", "iis_neighbors", int, None),
    ("--metric", "metric", str, METRIC_RULES),
    ("--weight-scheme", "weight_scheme", str, WEIGHT_SCHEMES),
    ("--voting", "voting", str, VOTING_RULES),
    ("--smo-tol", "smo_tol", float, None),
    ("--cache-mb", "cache_mb", float, None),
]


class UsageError(Exception):
    pass


def _add_data_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--data", required=required, help="CSV file, one sample per row")
    p.add_argument("--label-col", type=int, default=-1, help="label column (default: last)")
    p.add_argument("--header", action="store_true", help="skip the first line")


def _add_param_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("parameters (defaults are the recommended values)")
    for flag, name, typ, choices in PARAM_FLAGS:
        g.add_argument(flag, dest=name, type=typ, choices=choices, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--force", action="store_true", help="allow values outside recommended ranges")


def config_from_args(args) -> Config:
    if args.validation == "cckf" and args.val_fraction is not None:
        raise UsageError("--validation cckf uses folds; --val-fraction does not apply")
    kw = {name: getattr(args, name) for _, name, _, _ in PARAM_FLAGS if getattr(args, name) is not None}
    kw.update(seed=args.seed, threads=args.threads, force=args.force)
    try:
        return Config(**kw)
    except ConfigError as e:
        raise UsageError(str(e)) from e


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mlsvm", description="Multilevel weighted SVM")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a classifier")
    _add_data_flags(p)
    _add_param_flags(p)
    p.add_argument("--model-out", required=True)
    p.add_argument("--report", help="write the JSON run report here (default: stdout)")
    p.add_argument("--dump-hierarchy", help="write per-level hierarchy statistics as JSON")

    p = sub.add_parser("predict", help="apply a saved classifier")
    _add_data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="CSV of predicted label and decision value")
    p.add_argument("--report", help="JSON metrics when the data carry labels")

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    _add_data_flags(p)
    _add_param_flags(p)
    p.set_defaults(seed=None)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--report", help="write the JSON run report here (default: stdout)")

    p = sub.add_parser("gen", help="generate a synthetic data set")
    p.add_argument("--kind", required=True, choices=("twonorm", "ringnorm", "imbalanced"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("knn", help="precompute a k-NN graph cache")
    _add_data_flags(p)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--mode", choices=("auto", "exact", "approximate"), default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cache-out", required=True,
                   help="cache directory; point MLSVM_CACHE_DIR here when training")
    return ap


# ---------------------------------------------------------------------------
# reports


def strip_timing(obj):
    """Copy of a report with every wall-clock or worker-count entry removed."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def _config_echo(cfg: Config) -> dict:
    d = cfg.to_dict()
    d.pop("threads")  # results never depend on it; reported under "runtime"
    return d


def _runtime(timings: dict, n: int, dim: int, threads: int) -> dict:
    phases = {k: float(timings.get(k, 0.0)) for k in PHASES}
    total = sum(phases.values())
    return {
        "threads": threads,
        "timings": phases,
        "total_seconds": total,
        "us_per_point": total * 1e6 / n,
        "us_per_value": total * 1e6 / (n * dim),
    }


def train_report(c: TrainedClassifier, d: Dataset) -> dict:
    chosen = next(r for r in c.level_reports if r.level == c.chosen_level)
    rt = _runtime(c.timings, d.n, d.d, c.config.threads)
    return {
        "command": "train",
        "config": _config_echo(c.config),
        "n": d.n,
        "dim": d.d,
        "depth": c.depth,
        "chosen_level": c.chosen_level,
        "levels": [r.to_dict() for r in sorted(c.level_reports, key=lambda r: -r.level)],
        "final": chosen.report.to_dict(),
        "total_seconds": rt["total_seconds"],
        "us_per_point": rt["us_per_point"],
        "us_per_value": rt["us_per_value"],
        "runtime": rt,
    }


def cv_report(res, d: Dataset, cfg: Config, folds: int, repeats: int, seed: int) -> dict:
    timings = {k: sum(t.get(k, 0.0) for t in res.timings) for k in PHASES}
    rt = _runtime(timings, d.n, d.d, cfg.threads)
    return {
        "command": "cv",
        "config": _config_echo(cfg),
        "n": d.n,
        "dim": d.d,
        "folds": folds,
        "repeats": repeats,
        "seed": seed,
        "depths": res.depths,
        "chosen_levels": res.chosen_levels,
        "per_fold": [r.to_dict() for r in res.folds],
        "final": dict(res.mean),
        "std": dict(res.std),
        "gmean": res.mean["gmean"],
        "total_seconds": rt["total_seconds"],
        "us_per_point": rt["us_per_point"],
        "us_per_value": rt["us_per_value"],
        "runtime": rt,
    }


def report_schema() -> dict:
    return json.loads(resources.files("mlsvm").joinpath("report_schema.json").read_text())


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, report_schema())


def _emit(report: dict, path: str | None) -> None:
    validate_report(report)
    text = json.dumps(report, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# commands


def _load(args) -> Dataset:
    return load_csv(args.data, label_column=args.label_col, has_header=args.header)


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    d = _load(args)
    c = mlsvm_train(d, cfg)
    save_model(c, args.model_out)
    if args.dump_hierarchy:
        if c.hierarchy is not None:
            c.hierarchy.dump_json(args.dump_hierarchy)
        else:
            Path(args.dump_hierarchy).write_text(json.dumps({"depth": 1, "levels": []}, indent=2))
    _emit(train_report(c, d), args.report)
    return 0


def cmd_predict(args) -> int:
    c = load_model(args.model)
    raw = np.loadtxt(args.data, delimiter=",", ndmin=2, skiprows=1 if args.header else 0)
    dim = c.normalization.mean.shape[0]
    labels = None
    if raw.shape[1] == dim + 1:
        d = _load(args)
        points, labels = d.points, d.labels
    else:
        points = raw
    t0 = time.perf_counter()
    pred, values = mlsvm_predict(c, points)
    secs = time.perf_counter() - t0
    with open(args.out, "w") as fh:
        fh.write("label,decision_value\n")
        for lab, v in zip(pred, values):
            fh.write(f"{int(lab)},{float(v)!r}\n")
    if labels is not None:
        rep = {
            "command": "predict",
            "n": int(points.shape[0]),
            "dim": dim,
            "final": compute_metrics(pred, labels).to_dict(),
            "total_seconds": secs,
            "us_per_point": secs * 1e6 / points.shape[0],
            "us_per_value": secs * 1e6 / points.size,
        }
        if args.report:
            Path(args.report).write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
        else:
            print(json.dumps(rep, indent=2, sort_keys=True))
    return 0


def cmd_cv(args) -> int:
    if args.seed is None:
        raise UsageError("cv requires --seed for reproducible fold assignment")
    cfg = config_from_args(args)
    d = _load(args)
    res = cross_validate(d, cfg, args.folds, args.repeats, args.seed)
    _emit(cv_report(res, d, cfg, args.folds, args.repeats, args.seed), args.report)
    return 0


def cmd_gen(args) -> int:
    if args.kind == "imbalanced":
        d = gen_imbalanced_mixture(args.n, args.seed, d=args.dim or 10)
    else:
        d = gen_synthetic(args.kind, args.n, args.seed, d=args.dim or 20)
    save_csv(d, args.out)
    return 0


def cmd_knn(args) -> int:
    """Build the per-class graphs that ``train`` on the same file would need."""
    d = _load(args)
    X = fit_normalization(d.points).apply(d.points)
    for cls in (1, -1):
        pts = X[d.labels == cls]
        if pts.shape[0] >= 2:
            cached_knn_graph(pts, min(args.k, pts.shape[0] - 1), args.mode, args.seed, args.cache_out)
    return 0


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "cv": cmd_cv, "gen": cmd_gen, "knn": cmd_knn}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"mlsvm: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failures map to exit code 1
        print(f"mlsvm: {type(e).__name__}: {e}", file=sys.stderr)
        if os.environ.get("MLSVM_DEBUG"):
            raise
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()

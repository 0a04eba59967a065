"""Quality metrics, validation-set strategies, nested uniform design search
and cross-level model selection."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .qp import class_weights, smo_train

log = logging.getLogger(__name__)

LOG_BOUNDS = (-10.0, 10.0)
STAGE1_POINTS = 9
STAGE2_POINTS = 13
STAGE2_HALF_WIDTH = 2.0
GOLDEN = 0.6180339887


class ValidationError(ValueError):
    pass


@dataclass
class PerformanceReport:
    tp: int
    tn: int
    fp: int
    fn: int
    sn: float
    sp: float
    gmean: float
    acc: float
    ppv: float
    f1: float
    seconds: float = 0.0
    level: int = 0
    undefined: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: float, den: float, name: str, undefined: list[str]) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def report_from_counts(tp: int, tn: int, fp: int, fn: int, level: int = 0,
                       seconds: float = 0.0) -> PerformanceReport:
    undefined: list[str] = []
    sn = _ratio(tp, tp + fn, "sn", undefined)
    sp = _ratio(tn, tn + fp, "sp", undefined)
    ppv = _ratio(tp, tp + fp, "ppv", undefined)
    acc = _ratio(tp + tn, tp + tn + fp + fn, "acc", undefined)
    f1 = _ratio(2 * ppv * sn, ppv + sn, "f1", undefined)
    return PerformanceReport(
        int(tp), int(tn), int(fp), int(fn), sn, sp, math.sqrt(sn * sp), acc, ppv, f1,
        seconds, level, undefined,
    )


def compute_metrics(predicted, truth, level: int = 0, seconds: float = 0.0) -> PerformanceReport:
    p = np.asarray(predicted).ravel()
    t = np.asarray(truth).ravel()
    if p.shape != t.shape or p.size == 0:
        raise ValidationError("predicted and true labels must be equal-length and nonempty")
    tp = int(np.sum((p == 1) & (t == 1)))
    tn = int(np.sum((p == -1) & (t == -1)))
    fp = int(np.sum((p == 1) & (t == -1)))
    fn = int(np.sum((p == -1) & (t == 1)))
    return report_from_counts(tp, tn, fp, fn, level, seconds)


# ---------------------------------------------------------------------------
# validation sets


@dataclass
class Split:
    train_idx: np.ndarray  # indices into the level training data
    val_points: np.ndarray
    val_labels: np.ndarray
    val_rows: np.ndarray | None = None  # provenance of validation points


@dataclass
class ValidationPlan:
    strategy: str
    splits: list[Split]

    @property
    def retrain_on_full(self) -> bool:
        return self.strategy == "cckf"


def _stratified_sample(labels: np.ndarray, fraction: float, rng) -> np.ndarray:
    out = []
    for cls in (1, -1):
        idx = np.flatnonzero(labels == cls)
        m = int(round(fraction * idx.size))
        if idx.size and m == 0:
            m = 1
        out.append(rng.choice(idx, size=min(m, idx.size), replace=False))
    return np.sort(np.concatenate(out))


def make_validation_set(strategy: str, level_points, level_labels, finest_points,
                        finest_labels, fraction: float = 0.1, seed: int = 0,
                        folds: int = 5, finest_rows=None) -> ValidationPlan:
    """Build the validation plan for one level.

    ``cs``: hold out a stratified ``fraction`` of the level data.
    ``cckf``: k-fold schedule over the level data.
    ``ff``: validate on the full finest training set.
    ``fs``: validate on a stratified ``fraction`` of the finest training set.
    """
    level_points = np.asarray(level_points, dtype=float)
    level_labels = np.asarray(level_labels)
    finest_points = np.asarray(finest_points, dtype=float)
    finest_labels = np.asarray(finest_labels)
    if finest_rows is None:
        finest_rows = np.arange(finest_labels.size)
    n = level_labels.size
    rng = np.random.default_rng(seed)
    strategy = strategy.lower()
    if strategy in ("cs", "cckf"):
        if not 0 < fraction <= 0.5:
            raise ValidationError("fraction must lie in (0, 0.5]")
        for cls in (1, -1):
            if np.sum(level_labels == cls) < 2:
                raise ValidationError(f"level has fewer than 2 points of class {cls:+d}")
    if strategy == "ff":
        return ValidationPlan("ff", [Split(np.arange(n), finest_points, finest_labels, finest_rows)])
    if strategy == "fs":
        if not 0 < fraction <= 0.5:
            raise ValidationError("fraction must lie in (0, 0.5]")
        s = _stratified_sample(finest_labels, fraction, rng)
        return ValidationPlan("fs", [Split(np.arange(n), finest_points[s], finest_labels[s], finest_rows[s])])
    if strategy == "cs":
        held = _stratified_sample(level_labels, fraction, rng)
        mask = np.ones(n, dtype=bool)
        mask[held] = False
        return ValidationPlan("cs", [Split(np.flatnonzero(mask), level_points[held], level_labels[held])])
    if strategy == "cckf":
        k = int(min(folds, np.sum(level_labels == 1), np.sum(level_labels == -1)))
        k = max(k, 2)
        fold = np.empty(n, dtype=np.int64)
        for cls in (1, -1):
            idx = rng.permutation(np.flatnonzero(level_labels == cls))
            fold[idx] = np.arange(idx.size) % k
        splits = [
            Split(np.flatnonzero(fold != f), level_points[fold == f], level_labels[fold == f])
            for f in range(k)
        ]
        return ValidationPlan("cckf", splits)
    raise ValidationError(f"unknown validation strategy {strategy!r}")


# ---------------------------------------------------------------------------
# model selection


@dataclass(frozen=True)
class ParamPoint:
    log2c: float
    log2g: float

    def __post_init__(self):
        lo, hi = LOG_BOUNDS
        if not (lo <= self.log2c <= hi and lo <= self.log2g <= hi):
            raise ValueError(f"parameter point {self} outside [{lo}, {hi}]^2")

    @property
    def C(self) -> float:
        return 2.0 ** self.log2c

    @property
    def gamma(self) -> float:
        return 2.0 ** self.log2g


def uniform_design(m: int, box: tuple[float, float, float, float]) -> list[tuple[float, float]]:
    """Golden-ratio lattice of ``m`` points mapped onto (c_lo, c_hi, g_lo, g_hi)."""
    c_lo, c_hi, g_lo, g_hi = box
    pts = []
    for t in range(m):
        u = (t + 0.5) / m
        v = (t * GOLDEN) % 1.0
        pts.append((c_lo + u * (c_hi - c_lo), g_lo + v * (g_hi - g_lo)))
    return pts


def stage2_box(center: ParamPoint, half_width: float = STAGE2_HALF_WIDTH):
    lo, hi = LOG_BOUNDS
    return (
        max(lo, center.log2c - half_width), min(hi, center.log2c + half_width),
        max(lo, center.log2g - half_width), min(hi, center.log2g + half_width),
    )


def _sort_key(model, report: PerformanceReport, rule: str, level: int, params=None):
    if rule == "gmean_then_sn":
        primary = (report.gmean, report.sn)
    elif rule == "gmean":
        primary = (report.gmean,)
    elif rule == "acc":
        primary = (report.acc,)
    else:
        raise ValueError(f"unknown selection rule {rule!r}")
    n_sv = getattr(model, "n_sv", 0)
    tail = ()
    if params is not None:
        tail = (-params.log2c, -params.log2g)
    return primary + (-n_sv, level) + tail


def select_best(candidates, rule: str = "gmean_then_sn") -> int:
    """Index of the winning (model, report) pair.

    Ties on the rule's metrics go to fewer support vectors, then to the
    coarser level (report.level), then to smaller C and gamma when the
    candidate carries a third ``ParamPoint`` element.
    """
    if not candidates:
        raise ValueError("select_best needs at least one candidate")
    keys = []
    for cand in candidates:
        model, report = cand[0], cand[1]
        params = cand[2] if len(cand) > 2 else None
        keys.append(_sort_key(model, report, rule, report.level, params))
    return max(range(len(keys)), key=lambda i: keys[i])


@dataclass
class TrainSpec:
    """How a single (C, gamma) candidate is fitted."""

    weight_scheme: str = "per_point"
    tol: float = 1e-3
    max_iter: int = 10_000_000
    cache_mb: float = 512.0


def fit_svm(points, labels, volumes, params: ParamPoint, spec: TrainSpec, level: int = 0):
    W = class_weights(labels, volumes, spec.weight_scheme)
    return smo_train(points, labels, params.C, W, params.gamma, spec.tol, spec.max_iter,
                     spec.cache_mb, level=level)


@dataclass
class NudResult:
    params: ParamPoint
    model: object
    report: PerformanceReport
    trainings: int
    candidates: list[tuple[ParamPoint, PerformanceReport]]


def _evaluate(points, labels, volumes, params, plan, spec, level, effective_rule):
    models = []
    preds, truth = [], []
    for split in plan.splits:
        tr = split.train_idx
        m = fit_svm(points[tr], labels[tr], volumes[tr], params, spec, level)
        models.append(m)
        preds.append(m.predict(split.val_points))
        truth.append(split.val_labels)
    rep = compute_metrics(np.concatenate(preds), np.concatenate(truth), level)
    return models[0], rep


def nud_search(points, labels, volumes, plan: ValidationPlan, center: ParamPoint | None = None,
               metric: str = "gmean", spec: TrainSpec | None = None, level: int = 0,
               threads: int = 1) -> NudResult:
    """Two-stage uniform-design search over (log2 C, log2 gamma).

    Without ``center`` a 9-point design covers the whole box, then a 13-point
    design refines around its winner; with ``center`` only the second stage
    runs. Under CCkF the winner is refitted on all level data.
    """
    spec = spec or TrainSpec()
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    volumes = np.ones(labels.size) if volumes is None else np.asarray(volumes, dtype=float)
    val_labels = np.concatenate([s.val_labels for s in plan.splits])
    rule = metric
    if np.unique(val_labels).size < 2:
        log.warning("validation set has a single class; falling back to accuracy")
        rule = "acc"

    evaluated: list[tuple[object, PerformanceReport, ParamPoint]] = []
    trainings = 0

    def run(design):
        nonlocal trainings
        params = [ParamPoint(c, g) for c, g in design]

        def one(p):
            return _evaluate(points, labels, volumes, p, plan, spec, level, rule)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(one, params))
        else:
            results = [one(p) for p in params]
        trainings += len(params) * len(plan.splits)
        evaluated.extend((m, r, p) for (m, r), p in zip(results, params))

    lo, hi = LOG_BOUNDS
    if center is None:
        run(uniform_design(STAGE1_POINTS, (lo, hi, lo, hi)))
        center = evaluated[select_best(evaluated, rule)][2]
    run(uniform_design(STAGE2_POINTS, stage2_box(center)))
    best = evaluated[select_best(evaluated, rule)]
    model, report, params = best
    if plan.retrain_on_full:
        model = fit_svm(points, labels, volumes, params, spec, level)
        trainings += 1
    return NudResult(params, model, report, trainings, [(p, r) for _, r, p in evaluated])

"""End-to-end multilevel training, prediction, model files and cross-validation."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coarsen import Hierarchy, build_hierarchy
from .config import Config
from .data import DataError, Dataset, Normalization, fit_normalization, kfold_split
from .graph import cached_knn_graph
from .modelsel import (
    ParamPoint, PerformanceReport, TrainSpec, compute_metrics, make_validation_set,
    nud_search, select_best,
)
from .qp import SvmModel
from .refine import ClassData, ModelEnsemble, PairInfo, refine_level, uncoarsen_amg, uncoarsen_iis

log = logging.getLogger(__name__)

MODEL_MAGIC = "MLSVM1"
PHASES = ("graph", "coarsening", "coarsest", "refinement")
METRIC_FIELDS = ("sn", "sp", "gmean", "acc", "ppv", "f1")


@dataclass
class LevelReport:
    level: int
    kind: str  # single | ensemble | inherited
    train_size: int
    n_sv: int
    log2c: float
    log2g: float
    trainings: int
    seconds: float
    report: PerformanceReport

    def to_dict(self) -> dict:
        return {
            "level": self.level, "kind": self.kind, "train_size": self.train_size,
            "n_sv": self.n_sv, "log2c": self.log2c, "log2g": self.log2g,
            "trainings": self.trainings, "seconds": self.seconds,
            "metrics": self.report.to_dict(),
        }


@dataclass
class TrainedClassifier:
    model: SvmModel | ModelEnsemble
    chosen_level: int
    level_reports: list[LevelReport]
    normalization: Normalization
    config: Config
    depth: int = 1
    timings: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    hierarchy: Hierarchy | None = None

    @property
    def params(self) -> ParamPoint | None:
        for r in self.level_reports:
            if r.level == self.chosen_level:
                return ParamPoint(r.log2c, r.log2g)
        return None

    def decision_function(self, points) -> np.ndarray:
        X = self.normalization.apply(np.atleast_2d(np.asarray(points, dtype=float)))
        return self.model.decision_function(X)

    def predict(self, points) -> np.ndarray:
        return np.where(self.decision_function(points) >= 0, 1, -1)


# ---------------------------------------------------------------------------
# training


def _level_metric(cfg: Config, level: int) -> str:
    if cfg.metric is not None:
        return cfg.metric
    return "gmean" if level == 0 else "gmean_then_sn"


def _evaluate_on_plan(model, plan, level: int) -> PerformanceReport:
    pts = np.vstack([s.val_points for s in plan.splits])
    lbl = np.concatenate([s.val_labels for s in plan.splits])
    return compute_metrics(model.predict(pts), lbl, level)


def _uncoarsen(h: Hierarchy, f: int, label: int, sv: np.ndarray, cfg: Config) -> np.ndarray:
    """Training indices at level f for one class, from support vectors at f + 1."""
    coarse = h.levels[f + 1].cls(label)
    fine = h.levels[f].cls(label)
    if sv.size == 0:
        return sv
    if coarse.copied_from_finer:
        return np.unique(sv)
    if cfg.coarsening == "iis":
        return uncoarsen_iis(sv, coarse.interp, fine.graph, cfg.iis_neighbors)
    return uncoarsen_amg(sv, coarse.interp, cfg.disaggregation, fine.graph,
                         cfg.disagg_distance, cfg.disagg_budget)


def _split_sv(model: SvmModel, n_pos: int):
    s = np.asarray(model.support, dtype=np.int64)
    return s[s < n_pos], s[s >= n_pos] - n_pos


def mlsvm_train(d: Dataset, cfg: Config | None = None, rows=None, cache_dir=None) -> TrainedClassifier:
    """Train a multilevel weighted SVM on ``d``.

    ``rows`` names the dataset rows of ``d`` (used for provenance checks in
    cross-validation). k-NN graphs are cached under ``cache_dir`` or the
    ``MLSVM_CACHE_DIR`` environment variable when set.
    """
    cfg = cfg or Config()
    if d.n_pos == 0 or d.n_neg == 0:
        raise DataError("training data must contain both classes")
    rows = np.arange(d.n) if rows is None else np.asarray(rows, dtype=np.int64)
    cache_dir = cache_dir or os.environ.get("MLSVM_CACHE_DIR") or None
    timings = dict.fromkeys(PHASES, 0.0)
    spec = TrainSpec(cfg.weight_scheme, cfg.smo_tol, cfg.smo_max_iter, cfg.cache_mb)

    t0 = time.perf_counter()
    norm = fit_normalization(d.points)
    X = norm.apply(d.points)
    y = d.labels
    strategy = cfg.validation_for(d.n)

    def make_plan(points, labels, level):
        return make_validation_set(strategy, points, labels, X, y, cfg.val_fraction,
                                   cfg.seed + 7919 * (level + 1), cfg.cv_folds, rows)

    provenance = {"train_rows": rows, "validation_rows": []}

    def note_plan(plan):
        for s in plan.splits:
            if s.val_rows is not None:
                provenance["validation_rows"].append(np.asarray(s.val_rows))

    reports: list[LevelReport] = []
    candidates = []

    # base case: small enough to train directly
    if d.n <= cfg.m_pos + cfg.m_neg:
        timings["graph"] = time.perf_counter() - t0
        t1 = time.perf_counter()
        plan = make_plan(X, y, 0)
        note_plan(plan)
        res = nud_search(X, y, np.ones(d.n), plan, None, _level_metric(cfg, 0), spec, 0, cfg.threads)
        timings["coarsest"] = time.perf_counter() - t1
        rep = LevelReport(0, "single", d.n, res.model.n_sv, res.params.log2c, res.params.log2g,
                          res.trainings, timings["coarsest"], res.report)
        return TrainedClassifier(res.model, 0, [rep], norm, cfg, 1, timings, provenance)

    ipos, ineg = np.flatnonzero(y == 1), np.flatnonzero(y == -1)
    graphs = []
    for idx in (ipos, ineg):
        k = min(cfg.k_nn, idx.size - 1)
        graphs.append(cached_knn_graph(X[idx], k, cfg.knn_mode, cfg.seed, cache_dir))
    timings["graph"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    h = build_hierarchy(X[ipos], X[ineg], graphs[0], graphs[1], cfg,
                        origin_pos=rows[ipos], origin_neg=rows[ineg])
    timings["coarsening"] = time.perf_counter() - t1

    # coarsest level: full two-stage search
    t1 = time.perf_counter()
    L = h.depth - 1
    top = h.coarsest
    Xc = np.vstack([top.pos.points, top.neg.points])
    yc = np.concatenate([np.ones(top.pos.size, np.int64), -np.ones(top.neg.size, np.int64)])
    vc = np.concatenate([top.pos.volumes, top.neg.volumes])
    plan = make_plan(Xc, yc, L)
    note_plan(plan)
    res = nud_search(Xc, yc, vc, plan, None, _level_metric(cfg, L), spec, L, cfg.threads)
    timings["coarsest"] = time.perf_counter() - t1
    model = res.model
    params = res.params
    if plan.strategy == "cs":
        s = plan.splits[0].train_idx[model.support]
        sv_pos, sv_neg = s[s < top.pos.size], s[s >= top.pos.size] - top.pos.size
    else:
        sv_pos, sv_neg = _split_sv(model, top.pos.size)
    rep = LevelReport(L, "single", yc.size, model.n_sv, params.log2c, params.log2g,
                      res.trainings, timings["coarsest"], res.report)
    reports.append(rep)
    candidates.append((model, _with_level(res.report, L), params))

    # uncoarsening
    t1 = time.perf_counter()
    for f in range(L - 1, -1, -1):
        ts = time.perf_counter()
        lv = h.levels[f]
        t_pos = _uncoarsen(h, f, 1, sv_pos, cfg)
        t_neg = _uncoarsen(h, f, -1, sv_neg, cfg)
        pos = ClassData(lv.pos.points, lv.pos.volumes, lv.pos.graph)
        neg = ClassData(lv.neg.points, lv.neg.volumes, lv.neg.graph)
        plans = []

        def level_plan(points, labels, f=f):
            p = make_plan(points, labels, f)
            plans.append(p)
            return p

        rr = refine_level(pos, neg, t_pos, t_neg, params, cfg, level_plan, f,
                          _level_metric(cfg, f), spec, fallback=model)
        if plans:
            note_plan(plans[0])
        if rr.kind == "single":
            report = rr.report
            params = rr.params
        else:
            Xt = np.vstack([pos.points[t_pos], neg.points[t_neg]])
            yt = np.concatenate([np.ones(t_pos.size, np.int64), -np.ones(t_neg.size, np.int64)])
            eplan = make_plan(Xt, yt, f) if t_pos.size and t_neg.size else None
            if eplan is not None:
                note_plan(eplan)
                report = _evaluate_on_plan(rr.model, eplan, f)
            else:
                report = compute_metrics(rr.model.predict(X), y, f)
        model = rr.model
        sv_pos, sv_neg = rr.sv_pos, rr.sv_neg
        if rr.kind == "inherited":
            # nothing new at this level; keep the coarse support vectors usable here
            sv_pos, sv_neg = t_pos, t_neg
        report = _with_level(report, f)
        reports.append(LevelReport(f, rr.kind, rr.train_size, model.n_sv, rr.params.log2c,
                                   rr.params.log2g, rr.trainings, time.perf_counter() - ts, report))
        candidates.append((model, report, rr.params))
    timings["refinement"] = time.perf_counter() - t1

    best = select_best(candidates, "gmean_then_sn")
    chosen = candidates[best]
    return TrainedClassifier(chosen[0], chosen[1].level, reports, norm, cfg, h.depth, timings,
                             provenance, hierarchy=h)


def _with_level(report: PerformanceReport, level: int) -> PerformanceReport:
    report.level = level
    return report


def mlsvm_predict(c: TrainedClassifier, points) -> tuple[np.ndarray, np.ndarray]:
    """Labels and decision values for raw (unnormalized) points."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    dim = c.normalization.mean.shape[0]
    if X.shape[1] != dim:
        raise DataError(f"dimension mismatch: classifier expects {dim} features, got {X.shape[1]}")
    values = c.decision_function(X)
    return np.where(values >= 0, 1, -1), values


# ---------------------------------------------------------------------------
# model files


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def _write_model(out: list[str], m: SvmModel) -> None:
    out.append(f"gamma {float(m.gamma)!r}")
    out.append(f"C {float(m.C)!r}")
    out.append(f"W+ {float(m.w_pos)!r}")
    out.append(f"W- {float(m.w_neg)!r}")
    out.append(f"b {float(m.b)!r}")
    out.append(f"sv {m.n_sv}")
    for a, x in zip(m.dual_coef, m.support_vectors):
        out.append(f"{float(a)!r} {_floats(x)}")


def save_model(c: TrainedClassifier, path) -> None:
    ens = isinstance(c.model, ModelEnsemble)
    out = [MODEL_MAGIC, f"mode {'ensemble' if ens else 'single'}",
           f"level {c.chosen_level}", f"depth {c.depth}",
           f"mean {_floats(c.normalization.mean)}", f"std {_floats(c.normalization.std)}",
           f"config {json.dumps(c.config.to_dict(), sort_keys=True)}"]
    p = c.params
    out.append(f"params {float(p.log2c)!r} {float(p.log2g)!r}" if p else "params none")
    if ens:
        out.append(f"voting {c.model.rule}")
        out.append(f"models {len(c.model.models)}")
        for m, info in zip(c.model.models, c.model.pairs):
            _write_model(out, m)
            out.append(f"centroid+ {_floats(info.centroid_pos)}")
            out.append(f"centroid- {_floats(info.centroid_neg)}")
            out.append(f"volumes {float(info.volume_pos)!r} {float(info.volume_neg)!r}")
            out.append(f"midpoint {_floats(info.midpoint)}")
    else:
        out.append("models 1")
        _write_model(out, c.model)
    Path(path).write_text("\n".join(out) + "\n")


class _Lines:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise DataError("truncated model file")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def field(self, name: str) -> str:
        key, _, rest = self.next().partition(" ")
        if key != name:
            raise DataError(f"model file: expected {name!r}, found {key!r}")
        return rest


def _read_model(r: _Lines, level: int) -> SvmModel:
    gamma = float(r.field("gamma"))
    C = float(r.field("C"))
    wp = float(r.field("W+"))
    wn = float(r.field("W-"))
    b = float(r.field("b"))
    n = int(r.field("sv"))
    rows = [np.array(r.next().split(), dtype=float) for _ in range(n)]
    arr = np.array(rows) if rows else np.zeros((0, 1))
    return SvmModel(np.ascontiguousarray(arr[:, 1:]), arr[:, 0].copy(), b, gamma, C, wp, wn,
                    level=level)


def load_model(path) -> TrainedClassifier:
    r = _Lines(Path(path).read_text())
    magic = r.next().strip()
    if magic != MODEL_MAGIC:
        raise DataError(f"unsupported model file version {magic!r}")
    mode = r.field("mode")
    level = int(r.field("level"))
    depth = int(r.field("depth"))
    mean = np.array(r.field("mean").split(), dtype=float)
    std = np.array(r.field("std").split(), dtype=float)
    cfg = Config.from_dict(json.loads(r.field("config")))
    ptxt = r.field("params").split()
    params = None if ptxt == ["none"] else ParamPoint(float(ptxt[0]), float(ptxt[1]))
    if mode == "ensemble":
        rule = r.field("voting")
        count = int(r.field("models"))
        models, infos = [], []
        for _ in range(count):
            models.append(_read_model(r, level))
            cp = np.array(r.field("centroid+").split(), dtype=float)
            cn = np.array(r.field("centroid-").split(), dtype=float)
            vp, vn = (float(v) for v in r.field("volumes").split())
            r.field("midpoint")
            infos.append(PairInfo(cp, cn, vp, vn))
        model = ModelEnsemble(models, infos, rule=rule, level=level, params=params)
    elif mode == "single":
        r.field("models")
        model = _read_model(r, level)
    else:
        raise DataError(f"unknown model mode {mode!r}")
    reports = []
    if params is not None:
        dummy = compute_metrics([1], [1], level)
        reports.append(LevelReport(level, mode, 0, model.n_sv, params.log2c, params.log2g, 0, 0.0, dummy))
    return TrainedClassifier(model, level, reports, Normalization(mean, std), cfg, depth)


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class CVResult:
    folds: list[PerformanceReport]
    mean: dict
    std: dict
    depths: list[int]
    chosen_levels: list[int]
    seconds: list[float]
    timings: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean, "std": self.std, "depths": self.depths,
            "chosen_levels": self.chosen_levels,
            "folds": [r.to_dict() for r in self.folds],
            "fold_seconds": self.seconds, "fold_timings": self.timings,
        }


def check_isolation(c: TrainedClassifier, test_rows) -> None:
    """Raise if any test row reached training or validation."""
    test = np.asarray(test_rows, dtype=np.int64)
    seen = [c.provenance.get("train_rows", np.zeros(0, np.int64))] + list(
        c.provenance.get("validation_rows", []))
    for arr in seen:
        if np.intersect1d(arr, test).size:
            raise AssertionError("a test-fold row was used for training or validation")
    if c.hierarchy is not None:
        for lv in c.hierarchy.levels[:1]:
            for cl in (lv.pos, lv.neg):
                if cl.origin is not None and np.intersect1d(cl.origin, test).size:
                    raise AssertionError("a test-fold row entered the hierarchy")


def cross_validate(d: Dataset, cfg: Config | None = None, k: int = 10, repeats: int = 1,
                   seed: int = 0, cache_dir=None) -> CVResult:
    """Stratified k-fold cross-validation; each repeat reshuffles the folds."""
    cfg = cfg or Config()
    if k < 2:
        raise DataError("k must be >= 2")
    reports, depths, levels, secs, timings = [], [], [], [], []
    for rep in range(repeats):
        folds = kfold_split(d, k, seed + rep)
        for f in range(k):
            tr, te = folds.train_indices(f), folds.test_indices(f)
            t0 = time.perf_counter()
            c = mlsvm_train(d.subset(tr), cfg, rows=tr, cache_dir=cache_dir)
            check_isolation(c, te)
            pred, _ = mlsvm_predict(c, d.points[te])
            secs.append(time.perf_counter() - t0)
            r = compute_metrics(pred, d.labels[te], c.chosen_level, secs[-1])
            reports.append(r)
            depths.append(c.depth)
            levels.append(c.chosen_level)
            timings.append(dict(c.timings))
            log.info("fold %d/%d: gmean %.4f depth %d level %d", f + 1, k, r.gmean, c.depth,
                     c.chosen_level)
    mean = {m: float(np.mean([getattr(r, m) for r in reports])) for m in METRIC_FIELDS}
    std = {m: float(np.std([getattr(r, m) for r in reports])) for m in METRIC_FIELDS}
    return CVResult(reports, mean, std, depths, levels, secs, timings)

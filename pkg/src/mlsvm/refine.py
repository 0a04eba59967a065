"""Uncoarsening of support vectors and per-level refinement.

Small training sets are retrained with a local parameter search around the
inherited (C, gamma). Large ones are partitioned per class; each part is
paired with the nearest opposite-class part and the pair models vote.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .coarsen import InterpolationMatrix
from .config import Config
from .graph import ProximityGraph
from .modelsel import NudResult, ParamPoint, TrainSpec, ValidationPlan, fit_svm, nud_search
from .partition import partition_graph
from .qp import SvmModel

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# uncoarsening


def uncoarsen_iis(sv_c, interp: InterpolationMatrix, fine_graph: ProximityGraph, h: int = 5) -> np.ndarray:
    """Coarse support vectors (as fine points) plus their h nearest fine neighbours."""
    if h < 0:
        raise ValueError("h must be >= 0")
    base = interp.seeds[np.asarray(sv_c, dtype=np.int64)]
    out = [base]
    if h:
        W = fine_graph.weights
        for i in base:
            lo, hi = W.indptr[i], W.indptr[i + 1]
            nb = W.indices[lo:hi]
            # strongest weight = nearest point; ties to lower index
            order = np.lexsort((nb, -W.data[lo:hi]))[:h]
            out.append(nb[order])
    return np.unique(np.concatenate(out))


def _expand_hops(T: np.ndarray, W: sp.csr_matrix, hops: int) -> np.ndarray:
    mask = np.zeros(W.shape[0], dtype=bool)
    mask[T] = True
    frontier = mask.copy()
    for _ in range(hops):
        reach = (W[frontier].sum(axis=0) != 0) if frontier.any() else np.zeros((1, W.shape[0]), bool)
        reach = np.asarray(reach).ravel() & ~mask
        mask |= reach
        frontier = reach
    return np.flatnonzero(mask)


def uncoarsen_amg(sv_c, interp: InterpolationMatrix, mode: str = "full",
                  fine_graph: ProximityGraph | None = None, distance: int = 1,
                  budget: int = 4) -> np.ndarray:
    """Fine points of the aggregates of the coarse support vectors.

    ``k_distant`` adds graph neighbours up to ``distance`` hops away.
    ``sampled`` keeps the seed of each aggregate and then up to
    ``budget - 1`` members in ascending interpolation weight.
    """
    sv_c = np.asarray(sv_c, dtype=np.int64)
    Pc = interp.P.tocsc()
    if mode in ("full", "k_distant"):
        T = np.unique(Pc[:, sv_c].indices) if sv_c.size else np.zeros(0, np.int64)
        if mode == "k_distant":
            if fine_graph is None:
                raise ValueError("k_distant disaggregation needs the fine graph")
            T = _expand_hops(T, fine_graph.weights, distance)
        return T.astype(np.int64)
    if mode == "sampled":
        if budget < 1:
            raise ValueError("budget must be >= 1")
        out = []
        for c in sv_c:
            seed = int(interp.seeds[c])
            lo, hi = Pc.indptr[c], Pc.indptr[c + 1]
            rows, vals = Pc.indices[lo:hi], Pc.data[lo:hi]
            keep = rows != seed
            rows, vals = rows[keep], vals[keep]
            order = np.lexsort((rows, vals))
            out.append(np.concatenate([[seed], rows[order][: budget - 1]]))
        return np.unique(np.concatenate(out)).astype(np.int64) if out else np.zeros(0, np.int64)
    raise ValueError(f"unknown disaggregation mode {mode!r}")


# ---------------------------------------------------------------------------
# ensembles


def weighted_midpoint(c_i, c_j, vol_i: float, vol_j: float) -> np.ndarray:
    if vol_i <= 0 or vol_j <= 0:
        raise ValueError("part volumes must be positive")
    c_i = np.asarray(c_i, dtype=float)
    c_j = np.asarray(c_j, dtype=float)
    return (c_i * vol_i + c_j * vol_j) / (vol_i + vol_j)


@dataclass
class PairInfo:
    centroid_pos: np.ndarray
    centroid_neg: np.ndarray
    volume_pos: float
    volume_neg: float

    @property
    def midpoint(self) -> np.ndarray:
        return weighted_midpoint(self.centroid_pos, self.centroid_neg, self.volume_pos, self.volume_neg)


@dataclass
class ModelEnsemble:
    models: list[SvmModel]
    pairs: list[PairInfo]
    rule: str = "distance_weighted"
    distance: str = "euclidean"
    level: int = 0
    params: ParamPoint | None = None

    def __post_init__(self):
        if not self.models:
            raise ValueError("empty ensemble")
        if len(self.models) != len(self.pairs):
            raise ValueError("one pair record per model is required")

    @property
    def n_sv(self) -> int:
        return sum(m.n_sv for m in self.models)

    @property
    def midpoints(self) -> np.ndarray:
        return np.array([p.midpoint for p in self.pairs])

    def model_labels(self, X) -> np.ndarray:
        return np.array([m.predict(X) for m in self.models])  # (models, points)

    def decision_function(self, X, rule: str | None = None) -> np.ndarray:
        """Vote value in [-1, 1]; its sign is the ensemble label."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        rule = rule or self.rule
        L = self.model_labels(X).astype(float)
        if rule == "majority":
            return L.mean(axis=0)
        if rule != "distance_weighted":
            raise ValueError(f"unknown voting rule {rule!r}")
        M = self.midpoints
        d = np.sqrt(np.maximum(
            np.einsum("ij,ij->i", X, X)[:, None] - 2.0 * X @ M.T + np.einsum("ij,ij->i", M, M)[None, :],
            0.0,
        ))
        # recompute exactly where cancellation could hide an exact hit
        close = d < 1e-6
        if close.any():
            r, c = np.nonzero(close)
            d[r, c] = np.linalg.norm(X[r] - M[c], axis=1)
        out = np.empty(X.shape[0])
        hit = d == 0.0
        any_hit = hit.any(axis=1)
        if any_hit.any():
            # the models sitting exactly on the query decide alone
            out[any_hit] = np.sign((L.T * hit)[any_hit].sum(axis=1))
            out[any_hit] = np.where(out[any_hit] == 0, 1.0, out[any_hit])
        rest = ~any_hit
        if rest.any():
            # exactly rounded sums, so ties cancel to 0 whatever the model order
            inv = 1.0 / d[rest]
            num = np.array([math.fsum(row) for row in inv * L.T[rest]])
            den = np.array([math.fsum(row) for row in inv])
            out[rest] = num / den
        return out

    def predict(self, X, rule: str | None = None) -> np.ndarray:
        return np.where(self.decision_function(X, rule) >= 0, 1, -1)


def ensemble_predict(e: ModelEnsemble, t, rule: str = "distance_weighted") -> int:
    t = np.asarray(t, dtype=float).ravel()
    return int(e.predict(t[None, :], rule)[0])


# ---------------------------------------------------------------------------
# refinement


@dataclass
class ClassData:
    """Points, volumes and graph of one class at the current level."""

    points: np.ndarray
    volumes: np.ndarray
    graph: ProximityGraph


@dataclass
class RefineResult:
    model: SvmModel | ModelEnsemble
    params: ParamPoint
    kind: str  # "single" | "ensemble" | "inherited"
    trainings: int
    sv_pos: np.ndarray  # support vectors as indices into the class arrays
    sv_neg: np.ndarray
    train_size: int
    report: object = None
    extra: dict = field(default_factory=dict)


def _stack(pos: ClassData, neg: ClassData, t_pos, t_neg):
    X = np.vstack([pos.points[t_pos], neg.points[t_neg]])
    y = np.concatenate([np.ones(t_pos.size, np.int64), -np.ones(t_neg.size, np.int64)])
    v = np.concatenate([pos.volumes[t_pos], neg.volumes[t_neg]])
    return X, y, v


def _split_support(model: SvmModel, t_pos, t_neg):
    s = np.asarray(model.support, dtype=np.int64)
    return t_pos[s[s < t_pos.size]], t_neg[s[s >= t_pos.size] - t_pos.size]


def _parts_for(size: int, part_size: int) -> int:
    return int(min(size, max(2, round(size / part_size))))


def pair_parts(cent_pos: np.ndarray, cent_neg: np.ndarray) -> list[tuple[int, int]]:
    """Each part's nearest opposite-class part; duplicates removed, sorted."""
    d = (
        np.einsum("ij,ij->i", cent_pos, cent_pos)[:, None]
        - 2.0 * cent_pos @ cent_neg.T
        + np.einsum("ij,ij->i", cent_neg, cent_neg)[None, :]
    )
    pairs = {(i, int(np.argmin(d[i]))) for i in range(cent_pos.shape[0])}
    pairs |= {(int(np.argmin(d[:, j])), j) for j in range(cent_neg.shape[0])}
    return sorted(pairs)


def refine_level(pos: ClassData, neg: ClassData, t_pos, t_neg, inherited: ParamPoint,
                 cfg: Config, make_plan, level: int, metric: str,
                 spec: TrainSpec | None = None, fallback: SvmModel | None = None) -> RefineResult:
    """Train the level-``level`` model(s) on the uncoarsened set T.

    ``make_plan(points, labels)`` builds the validation plan for a single
    retraining. Sets of size ``cfg.q_t`` or more are partitioned instead.
    """
    spec = spec or TrainSpec(cfg.weight_scheme, cfg.smo_tol, cfg.smo_max_iter, cfg.cache_mb)
    t_pos = np.asarray(t_pos, dtype=np.int64)
    t_neg = np.asarray(t_neg, dtype=np.int64)
    size = t_pos.size + t_neg.size
    if t_pos.size == 0 or t_neg.size == 0:
        log.warning("level %d: uncoarsened set holds a single class; keeping inherited model", level)
        return RefineResult(fallback, inherited, "inherited", 0, np.zeros(0, np.int64),
                            np.zeros(0, np.int64), size)

    if size < cfg.q_t:
        X, y, v = _stack(pos, neg, t_pos, t_neg)
        plan: ValidationPlan = make_plan(X, y)
        res: NudResult = nud_search(X, y, v, plan, center=inherited, metric=metric, spec=spec,
                                    level=level, threads=cfg.threads)
        if plan.strategy == "cs":
            # the winner was fitted on the CS training part only
            tr = plan.splits[0].train_idx
            sv_p, sv_n = _split_support(res.model, t_pos[tr[tr < t_pos.size]],
                                        t_neg[tr[tr >= t_pos.size] - t_pos.size])
        else:
            sv_p, sv_n = _split_support(res.model, t_pos, t_neg)
        return RefineResult(res.model, res.params, "single", res.trainings, sv_p, sv_n, size,
                            report=res.report)

    # partitioned branch: inherited parameters, one model per nearest pair
    parts = []
    for cd, t in ((pos, t_pos), (neg, t_neg)):
        sub = ProximityGraph(cd.graph.weights[t][:, t], cd.volumes[t])
        parts.append(partition_graph(sub, cd.points[t], _parts_for(t.size, cfg.part_size)))
    ppos, pneg = parts
    pairs = pair_parts(ppos.centroids, pneg.centroids)

    def train_pair(pair):
        i, j = pair
        tp = t_pos[ppos.part == i]
        tn = t_neg[pneg.part == j]
        X, y, v = _stack(pos, neg, tp, tn)
        m = fit_svm(X, y, v, inherited, spec, level)
        return m, tp, tn

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            trained = list(pool.map(train_pair, pairs))
    else:
        trained = [train_pair(p) for p in pairs]
    models, infos, svp, svn = [], [], [], []
    for (i, j), (m, tp, tn) in zip(pairs, trained):
        models.append(m)
        infos.append(PairInfo(ppos.centroids[i], pneg.centroids[j],
                              float(ppos.volume_sums[i]), float(pneg.volume_sums[j])))
        a, b = _split_support(m, tp, tn)
        svp.append(a)
        svn.append(b)
    ens = ModelEnsemble(models, infos, rule=cfg.voting, level=level, params=inherited)
    return RefineResult(ens, inherited, "ensemble", len(models),
                        np.unique(np.concatenate(svp)), np.unique(np.concatenate(svn)), size,
                        extra={"parts_pos": ppos.K, "parts_neg": pneg.K})

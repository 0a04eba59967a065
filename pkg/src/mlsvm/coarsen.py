"""Per-class coarsening hierarchies.

AMG weighted aggregation (``coarsen_amg``) is the default; ``coarsen_iis``
selects coarse points by repeated random independent sets instead.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit

from .config import Config
from .graph import ProximityGraph, build_knn_graph, filter_weak_edges


class CoarseningStagnation(RuntimeError):
    """The coarse level is not smaller than the fine one."""


@dataclass
class InterpolationMatrix:
    P: sp.csr_matrix  # |fine| x |coarse|
    seeds: np.ndarray  # fine index of the seed of each coarse column

    @property
    def seed_map(self) -> dict[int, int]:
        return {int(s): c for c, s in enumerate(self.seeds)}


@dataclass
class ClassLevel:
    """One class at one level of the hierarchy.

    ``interp`` links the next-finer level to this one (None at the finest).
    ``origin`` holds dataset row indices at the finest level only.
    """

    points: np.ndarray
    graph: ProximityGraph
    interp: InterpolationMatrix | None = None
    copied_from_finer: bool = False
    origin: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def volumes(self) -> np.ndarray:
        return self.graph.volumes


@dataclass
class Level:
    index: int
    pos: ClassLevel
    neg: ClassLevel

    @property
    def size(self) -> int:
        return self.pos.size + self.neg.size

    def cls(self, label: int) -> ClassLevel:
        return self.pos if label == 1 else self.neg


@dataclass
class Hierarchy:
    levels: list[Level] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def coarsest(self) -> Level:
        return self.levels[-1]

    def summary(self) -> list[dict]:
        out = []
        for lv in self.levels:
            row = {"level": lv.index}
            for name, c in (("pos", lv.pos), ("neg", lv.neg)):
                row[name] = {
                    "size": c.size,
                    "volume_sum": float(c.volumes.sum()),
                    "edges": c.graph.edge_count,
                    "copied_from_finer": c.copied_from_finer,
                }
            out.append(row)
        return out

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"depth": self.depth, "levels": self.summary()}, fh, indent=2)


# ---------------------------------------------------------------------------
# AMG building blocks


def future_volumes(g: ProximityGraph) -> np.ndarray:
    """theta_i = v_i + sum_j v_j * w_ji / sum_k w_jk over neighbours j."""
    w = g.weights
    v = g.volumes
    deg = g.degree_weights()
    share = np.divide(v, deg, out=np.zeros_like(v), where=deg > 0)
    return v + w @ share


@njit(cache=True)
def _seed_sweep(indptr, indices, data, order, is_seed, q):
    for i in order:
        if is_seed[i]:
            continue
        tot = 0.0
        strong = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            tot += data[p]
            if is_seed[indices[p]]:
                strong += data[p]
        if tot == 0.0 or strong <= q * tot:
            is_seed[i] = True


def _descending(values: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return idx[np.lexsort((idx, -values))]


def select_seeds(g: ProximityGraph, theta_vec: np.ndarray, Q: float = 0.5,
                 eta: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Return (S, F) as sorted index arrays.

    Nodes with future volume above ``eta`` times the mean seed first. Future
    volumes are then recomputed on the subgraph induced by F, and F is swept
    in descending order; a node joins S when its coupling to S is at most Q.
    """
    n = g.node_count
    theta_vec = np.asarray(theta_vec, dtype=float)
    is_seed = theta_vec > eta * theta_vec.mean()
    rest = np.flatnonzero(~is_seed)
    if rest.size:
        sub = ProximityGraph(g.weights[rest][:, rest], g.volumes[rest])
        order = _descending(future_volumes(sub), rest)
        w = g.weights
        _seed_sweep(w.indptr, w.indices, w.data, order.astype(np.int64), is_seed, float(Q))
    if not is_seed.any():
        is_seed[_descending(theta_vec, np.arange(n))[0]] = True
    return np.flatnonzero(is_seed), np.flatnonzero(~is_seed)


def build_interpolation(g: ProximityGraph, S, r: int = 1) -> InterpolationMatrix:
    """AMG interpolation: seeds map to their own column with weight 1; other
    nodes split over their r strongest seed neighbours proportionally to edge
    weight. Non-seeds without a seed neighbour are promoted to seeds."""
    n = g.node_count
    is_seed = np.zeros(n, dtype=bool)
    is_seed[np.asarray(S, dtype=np.int64)] = True
    w = g.weights.tocoo()
    has_seed_nb = np.zeros(n, dtype=bool)
    has_seed_nb[w.row[is_seed[w.col]]] = True
    # promote orphans one at a time so that adjacent orphans share a seed
    W = g.weights
    for i in np.flatnonzero(~has_seed_nb & ~is_seed):
        if not has_seed_nb[i]:
            is_seed[i] = True
            has_seed_nb[W.indices[W.indptr[i] : W.indptr[i + 1]]] = True
    seeds = np.flatnonzero(is_seed)
    col_of = np.full(n, -1, dtype=np.int64)
    col_of[seeds] = np.arange(seeds.size)

    m = (~is_seed[w.row]) & is_seed[w.col]
    rows, cols, vals = w.row[m], w.col[m], w.data[m]
    order = np.lexsort((cols, -vals, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    rank = np.arange(rows.size) - np.searchsorted(rows, rows)
    keep = rank < r
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    rowsum = np.bincount(rows, weights=vals, minlength=n)
    vals = vals / rowsum[rows]

    all_rows = np.concatenate([seeds, rows])
    all_cols = np.concatenate([np.arange(seeds.size), col_of[cols]])
    all_vals = np.concatenate([np.ones(seeds.size), vals])
    P = sp.csr_matrix((all_vals, (all_rows, all_cols)), shape=(n, seeds.size))
    P.sort_indices()
    return InterpolationMatrix(P, seeds)


def coarse_edge_matrix(W: sp.spmatrix, P: sp.spmatrix) -> sp.csr_matrix:
    """P^T W P with the diagonal removed."""
    wc = (P.T @ W @ P).tocsr()
    wc.setdiag(0.0)
    wc.eliminate_zeros()
    return wc


def coarsen_amg(level: ClassLevel, cfg: Config, sparse: bool = False) -> ClassLevel:
    """One AMG aggregation step for a single class.

    Coarse points are volume-weighted centroids of their aggregates; with
    ``sparse=True`` each coarse point is the seed point itself.
    """
    g = level.graph
    theta_vec = future_volumes(g)
    S, _ = select_seeds(g, theta_vec, cfg.Q, cfg.eta)
    interp = build_interpolation(g, S, cfg.caliber)
    P = interp.P
    if P.shape[1] >= P.shape[0]:
        raise CoarseningStagnation(
            f"coarse size {P.shape[1]} >= fine size {P.shape[0]}; check Q/eta/theta"
        )
    v = g.volumes
    vc = np.asarray(P.T @ v).ravel()
    if sparse:
        xc = level.points[interp.seeds].copy()
    else:
        xc = (P.T @ (v[:, None] * level.points)) / vc[:, None]
    wc = coarse_edge_matrix(g.weights, P)
    gc = filter_weak_edges(ProximityGraph(wc, vc), cfg.theta)
    return ClassLevel(np.ascontiguousarray(xc), gc, interp)


# ---------------------------------------------------------------------------
# Iterative independent sets


@njit(cache=True)
def _independent_pass(indptr, indices, order, alive):
    blocked = ~alive
    chosen = np.zeros(order.size, dtype=np.int64)
    m = 0
    for i in order:
        if blocked[i]:
            continue
        chosen[m] = i
        m += 1
        blocked[i] = True
        for p in range(indptr[i], indptr[i + 1]):
            blocked[indices[p]] = True
    return chosen[:m]


def iis_select(g: ProximityGraph, Q: float, order_source) -> np.ndarray:
    """Accumulate random maximal independent sets within the budget ceil(Q n).

    ``order_source(alive_nodes)`` returns the visiting order for one pass. The
    first pass is truncated to the budget if needed; later passes are taken
    whole or not at all.
    """
    n = g.node_count
    budget = max(1, math.ceil(Q * n))
    w = g.weights
    alive = np.ones(n, dtype=bool)
    picked: list[np.ndarray] = []
    total = 0
    while alive.any():
        order = np.asarray(order_source(np.flatnonzero(alive)), dtype=np.int64)
        chosen = _independent_pass(w.indptr, w.indices, order, alive)
        if not picked and chosen.size > budget:
            chosen = chosen[:budget]
        elif total + chosen.size > budget:
            break
        picked.append(chosen)
        total += chosen.size
        alive[chosen] = False
        if total == budget:
            break
    return np.sort(np.concatenate(picked)) if picked else np.zeros(0, np.int64)


def coarsen_iis(level: ClassLevel, Q: float, seed: int, k_nn: int = 10) -> ClassLevel:
    rng = np.random.default_rng(seed)
    sel = iis_select(level.graph, Q, lambda alive: rng.permutation(alive))
    if sel.size >= level.size:
        raise CoarseningStagnation("independent-set coarsening kept every point")
    points = level.points[sel]
    if sel.size >= 2:
        g = build_knn_graph(points, min(k_nn, sel.size - 1))
    else:
        g = ProximityGraph(sp.csr_matrix((sel.size, sel.size)), np.ones(sel.size))
    g = ProximityGraph(g.weights, level.volumes[sel])
    P = sp.csr_matrix((np.ones(sel.size), (sel, np.arange(sel.size))), shape=(level.size, sel.size))
    return ClassLevel(np.ascontiguousarray(points), g, InterpolationMatrix(P, sel))


# ---------------------------------------------------------------------------


def _copy_level(c: ClassLevel) -> ClassLevel:
    n = c.size
    interp = InterpolationMatrix(sp.identity(n, format="csr"), np.arange(n))
    return ClassLevel(c.points, c.graph, interp, copied_from_finer=True)


def _coarsen_class(c: ClassLevel, cfg: Config, seed: int) -> ClassLevel:
    if cfg.coarsening == "iis":
        return coarsen_iis(c, cfg.Q, seed, cfg.k_nn)
    return coarsen_amg(c, cfg, sparse=cfg.coarsening == "sparse_amg")


def is_coarsest(pos_size: int, neg_size: int, cfg: Config) -> bool:
    return pos_size + neg_size <= cfg.coarsest_size or (
        pos_size <= cfg.m_pos and neg_size <= cfg.m_neg
    )


def build_hierarchy(points_pos, points_neg, g_pos: ProximityGraph, g_neg: ProximityGraph,
                    cfg: Config, origin_pos=None, origin_neg=None,
                    max_levels: int = 64) -> Hierarchy:
    """Coarsen both classes until the coarsest-level rule holds.

    A class already at or below its limit (``m_pos`` / ``m_neg``) is copied
    unchanged while the other keeps shrinking.
    """
    top = Level(
        0,
        ClassLevel(np.ascontiguousarray(points_pos, dtype=float), g_pos, origin=origin_pos),
        ClassLevel(np.ascontiguousarray(points_neg, dtype=float), g_neg, origin=origin_neg),
    )
    h = Hierarchy([top])
    while not is_coarsest(h.coarsest.pos.size, h.coarsest.neg.size, cfg):
        if h.depth >= max_levels:
            raise CoarseningStagnation(f"hierarchy exceeded {max_levels} levels")
        cur = h.coarsest
        i = cur.index + 1
        pos = (
            _copy_level(cur.pos) if cur.pos.size <= cfg.m_pos
            else _coarsen_class(cur.pos, cfg, cfg.seed + 2 * i)
        )
        neg = (
            _copy_level(cur.neg) if cur.neg.size <= cfg.m_neg
            else _coarsen_class(cur.neg, cfg, cfg.seed + 2 * i + 1)
        )
        h.levels.append(Level(i, pos, neg))
    return h

"""Per-class k-nearest-neighbour proximity graphs.

Edges carry inverse Euclidean distance as weight. Graphs are stored as a
symmetric CSR matrix with an explicit zero diagonal plus a node-volume vector.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

W_MAX = 1.0e6
EXACT_MODE_LIMIT = 20_000
CACHE_VERSION = "MLSVM-KNN1"


class GraphError(ValueError):
    pass


@dataclass
class ProximityGraph:
    weights: sp.csr_matrix
    volumes: np.ndarray

    def __post_init__(self):
        w = sp.csr_matrix(self.weights, dtype=float)
        w.eliminate_zeros()
        w.sort_indices()
        self.weights = w
        self.volumes = np.asarray(self.volumes, dtype=float)

    @property
    def node_count(self) -> int:
        return self.weights.shape[0]

    @property
    def edge_count(self) -> int:
        return self.weights.nnz // 2

    def neighbors(self, i: int) -> list[tuple[int, float]]:
        w = self.weights
        lo, hi = w.indptr[i], w.indptr[i + 1]
        return list(zip(w.indices[lo:hi].tolist(), w.data[lo:hi].tolist()))

    def degree_weights(self) -> np.ndarray:
        return np.asarray(self.weights.sum(axis=1)).ravel()

    def check(self) -> None:
        w = self.weights
        if (w - w.T).count_nonzero():
            diff = abs(w - w.T).max()
            if diff > 1e-12 * max(1.0, abs(w).max()):
                raise GraphError("graph is not symmetric")
        if np.any(w.diagonal() != 0):
            raise GraphError("graph has self-loops")
        if w.nnz and np.any(w.data <= 0):
            raise GraphError("non-positive edge weight")
        if np.any(self.volumes <= 0):
            raise GraphError("non-positive volume")


def _edges_to_graph(n: int, rows, cols, dist, volumes=None) -> ProximityGraph:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    dist = np.asarray(dist, dtype=float)
    keep = rows != cols
    rows, cols, dist = rows[keep], cols[keep], dist[keep]
    with np.errstate(divide="ignore"):
        w = np.where(dist > 0, 1.0 / dist, W_MAX)
    w = np.minimum(w, W_MAX)
    # an edge exists if either endpoint lists the other; keep one weight per pair
    lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
    key, first = np.unique(lo * n + hi, return_index=True)
    w = w[first]
    i, j = key // n, key % n
    sym = sp.coo_matrix(
        (np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
        shape=(n, n),
    ).tocsr()
    if volumes is None:
        volumes = np.ones(n)
    return ProximityGraph(sym, volumes)


def _knn_exact(points: np.ndarray, k: int, chunk: int = 2048):
    """Blocked brute-force search; returns k+1 hits per row (self included)."""
    n = points.shape[0]
    kk = min(k + 1, n)
    sq = np.einsum("ij,ij->i", points, points)
    idx = np.empty((n, kk), dtype=np.int64)
    dist = np.empty((n, kk))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        d2 = sq[lo:hi, None] - 2.0 * points[lo:hi] @ points.T + sq[None, :]
        part = np.argpartition(d2, kk - 1, axis=1)[:, :kk]
        # refine the selected distances exactly to avoid cancellation error
        diff = points[part] - points[lo:hi, None, :]
        idx[lo:hi] = part
        dist[lo:hi] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    rows = np.repeat(np.arange(n), kk)
    return rows, idx.ravel(), dist.ravel()


def _kmeans(points: np.ndarray, m: int, rng: np.random.Generator, iters: int = 5):
    n = points.shape[0]
    centers = points[rng.choice(n, size=m, replace=False)].copy()
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        d2 = (
            np.einsum("ij,ij->i", points, points)[:, None]
            - 2.0 * points @ centers.T
            + np.einsum("ij,ij->i", centers, centers)[None, :]
        )
        assign = np.argmin(d2, axis=1)
        for c in range(m):
            members = assign == c
            if members.any():
                centers[c] = points[members].mean(axis=0)
    return assign


def _kmeans_tree_leaves(points, idx, branching, leaf_size, rng, out):
    if idx.size <= leaf_size:
        out.append(idx)
        return
    m = min(branching, idx.size)
    assign = _kmeans(points[idx], m, rng)
    groups = [idx[assign == c] for c in range(m) if np.any(assign == c)]
    if len(groups) == 1:
        # degenerate split (e.g. duplicates); chop evenly
        groups = np.array_split(idx, int(np.ceil(idx.size / leaf_size)))
        out.extend(g for g in groups if g.size)
        return
    for g in groups:
        _kmeans_tree_leaves(points, g, branching, leaf_size, rng, out)


def _knn_approx(points: np.ndarray, k: int, seed: int = 0, branching: int = 32,
                leaf_size: int = 64, checks: int = 512):
    """Randomized k-means tree search.

    Queries are answered leaf by leaf: a leaf's points scan their own leaf
    plus the leaves with the nearest centroids until about ``checks``
    candidate points have been examined (bounded backtracking).
    """
    n = points.shape[0]
    rng = np.random.default_rng(seed)
    leaves: list[np.ndarray] = []
    _kmeans_tree_leaves(points, np.arange(n), branching, leaf_size, rng, leaves)
    leaves.sort(key=lambda a: int(a.min()))
    centroids = np.array([points[l].mean(axis=0) for l in leaves])
    n_leaves = len(leaves)
    mean_leaf = n / n_leaves
    n_probe = int(min(n_leaves, max(2, np.ceil(checks / mean_leaf))))
    csq = np.einsum("ij,ij->i", centroids, centroids)
    cd2 = csq[:, None] - 2.0 * centroids @ centroids.T + csq[None, :]
    np.fill_diagonal(cd2, -np.inf)
    probe = np.argsort(cd2, axis=1, kind="stable")[:, :n_probe]
    sq = np.einsum("ij,ij->i", points, points)
    rows_out, cols_out, dist_out = [], [], []
    for li, leaf in enumerate(leaves):
        cand = np.concatenate([leaves[p] for p in probe[li]])
        if cand.size < k + 1:
            extra = np.setdiff1d(np.arange(n), cand)[: k + 1 - cand.size]
            cand = np.concatenate([cand, extra])
        d2 = sq[leaf][:, None] - 2.0 * points[leaf] @ points[cand].T + sq[cand][None, :]
        d2[leaf[:, None] == cand[None, :]] = np.inf
        kk = min(k, cand.size - 1)
        part = np.argpartition(d2, kk - 1, axis=1)[:, :kk]
        sel = cand[part]
        dd = np.sqrt(np.maximum(np.take_along_axis(d2, part, axis=1), 0.0))
        rows_out.append(np.repeat(leaf, kk))
        cols_out.append(sel.ravel())
        dist_out.append(dd.ravel())
    return np.concatenate(rows_out), np.concatenate(cols_out), np.concatenate(dist_out)


def build_knn_graph(points, k: int = 10, mode: str = "auto", seed: int = 0) -> ProximityGraph:
    """Mutual-or k-NN graph with inverse-distance weights and unit volumes.

    ``mode`` is ``exact``, ``approximate`` or ``auto`` (exact up to 20,000 points).
    """
    points = np.ascontiguousarray(points, dtype=float)
    n = points.shape[0]
    if n < 2:
        raise GraphError("need at least 2 points")
    if k < 1 or k >= n:
        raise GraphError(f"k={k} must satisfy 1 <= k < n={n}")
    if mode == "auto":
        mode = "exact" if n <= EXACT_MODE_LIMIT else "approximate"
    if mode == "exact":
        rows, cols, dist = _knn_exact(points, k)
        # with duplicate points the query itself may appear at any rank
        other = rows != cols
        rows, cols, dist = rows[other], cols[other], dist[other]
        order = np.lexsort((cols, dist, rows))
        rows, cols, dist = rows[order], cols[order], dist[order]
        rank = np.arange(rows.size) - np.searchsorted(rows, rows)
        keep = rank < k
        rows, cols, dist = rows[keep], cols[keep], dist[keep]
    elif mode == "approximate":
        rows, cols, dist = _knn_approx(points, k, seed=seed)
    else:
        raise GraphError(f"unknown mode {mode!r}")
    return _edges_to_graph(n, rows, cols, dist)


def filter_weak_edges(g: ProximityGraph, theta: float) -> ProximityGraph:
    """Drop edge (i,j) when it is below theta times the mean adjacent weight
    at both endpoints. Averages come from the input graph."""
    if theta <= 0 or g.weights.nnz == 0:
        return ProximityGraph(g.weights.copy(), g.volumes.copy())
    w = g.weights.tocoo()
    deg = np.diff(g.weights.indptr)
    tot = g.degree_weights()
    avg = np.divide(tot, deg, out=np.zeros_like(tot), where=deg > 0)
    weak = (w.data < theta * avg[w.row]) & (w.data < theta * avg[w.col])
    keep = ~weak
    out = sp.csr_matrix((w.data[keep], (w.row[keep], w.col[keep])), shape=w.shape)
    return ProximityGraph(out, g.volumes.copy())


def filter_to_fixed_point(g: ProximityGraph, theta: float, max_iter: int = 100):
    """Apply :func:`filter_weak_edges` until no edge is removed.

    Returns the final graph and the list of per-pass removal counts.
    """
    removed = []
    for _ in range(max_iter):
        h = filter_weak_edges(g, theta)
        r = g.edge_count - h.edge_count
        removed.append(r)
        g = h
        if r == 0:
            break
    return g, removed


def content_hash(points: np.ndarray) -> str:
    arr = np.ascontiguousarray(points, dtype=np.float64)
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def save_graph_cache(path, g: ProximityGraph, points: np.ndarray, k: int) -> None:
    """Text listing: version line, header, then ``i j w`` triples (i < j)."""
    coo = sp.triu(g.weights, k=1).tocoo()
    buf = io.StringIO()
    buf.write(f"{CACHE_VERSION}\n")
    buf.write(f"hash {content_hash(points)}\n")
    buf.write(f"n {g.node_count} k {k} edges {coo.nnz}\n")
    for i, j, w in zip(coo.row, coo.col, coo.data):
        buf.write(f"{int(i)} {int(j)} {float(w)!r}\n")
    Path(path).write_text(buf.getvalue())


def load_graph_cache(path, points: np.ndarray | None = None) -> ProximityGraph:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CACHE_VERSION:
        raise GraphError(f"unsupported graph cache version in {path}")
    stored_hash = lines[1].split()[1]
    if points is not None and stored_hash != content_hash(points):
        raise GraphError("graph cache does not match input points")
    head = lines[2].split()
    n, m = int(head[1]), int(head[5])
    if m:
        trip = np.loadtxt(io.StringIO("\n".join(lines[3 : 3 + m])), ndmin=2)
        i, j, w = trip[:, 0].astype(np.int64), trip[:, 1].astype(np.int64), trip[:, 2]
    else:
        i = j = np.zeros(0, np.int64)
        w = np.zeros(0)
    upper = sp.coo_matrix((w, (i, j)), shape=(n, n)).tocsr()
    return ProximityGraph((upper + upper.T).tocsr(), np.ones(n))


def cached_knn_graph(points, k: int = 10, mode: str = "auto", seed: int = 0,
                     cache_dir=None) -> ProximityGraph:
    """Build a graph, reusing ``cache_dir/<hash>-k<k>.knn`` when present."""
    if cache_dir is None:
        return build_knn_graph(points, k, mode, seed)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{content_hash(points)[:32]}-k{k}-{mode}.knn"
    if path.exists():
        return load_graph_cache(path, points)
    g = build_knn_graph(points, k, mode, seed)
    save_graph_cache(path, g, points, k)
    return g

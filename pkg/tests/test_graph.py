import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from mlsvm.graph import (
    W_MAX, GraphError, ProximityGraph, build_knn_graph, cached_knn_graph, filter_to_fixed_point,
    filter_weak_edges, load_graph_cache, save_graph_cache,
)


def brute_knn_edges(points, k):
    """O(n^2) scan: {(i, j): 1/dist} for the mutual-or k-NN relation."""
    n = len(points)
    edges = {}
    for i in range(n):
        d = np.sqrt(((points - points[i]) ** 2).sum(axis=1))
        order = sorted((d[j], j) for j in range(n) if j != i)[:k]
        for dist, j in order:
            key = (min(i, j), max(i, j))
            edges[key] = min(1.0 / dist if dist > 0 else W_MAX, W_MAX)
    return edges


def graph_edges(g):
    coo = sp.triu(g.weights, k=1).tocoo()
    return {(int(i), int(j)): float(w) for i, j, w in zip(coo.row, coo.col, coo.data)}


def test_three_points_on_a_line():
    g = build_knn_graph(np.array([[0.0], [1.0], [3.0]]), k=1, mode="exact")
    assert graph_edges(g) == {(0, 1): 1.0, (1, 2): 0.5}
    np.testing.assert_array_equal(g.volumes, 1.0)


def test_duplicate_points_get_capped_weight():
    g = build_knn_graph(np.array([[1.0, 2.0], [1.0, 2.0]]), k=1)
    assert graph_edges(g) == {(0, 1): W_MAX}


def test_k_must_be_below_n():
    with pytest.raises(GraphError):
        build_knn_graph(np.zeros((3, 2)), k=3)


@given(st.integers(0, 10_000), st.integers(2, 120), st.integers(1, 10), st.integers(1, 6))
def test_exact_matches_brute_force(seed, n, k, d):
    k = min(k, n - 1)
    pts = np.random.default_rng(seed).normal(size=(n, d))
    g = build_knn_graph(pts, k, mode="exact")
    g.check()
    want = brute_knn_edges(pts, k)
    got = graph_edges(g)
    assert got.keys() == want.keys()
    for key, w in want.items():
        assert got[key] == pytest.approx(w, rel=1e-12)


def test_exact_matches_brute_force_n500():
    pts = np.random.default_rng(7).normal(size=(500, 4))
    got = graph_edges(build_knn_graph(pts, 10, mode="exact"))
    assert got.keys() == brute_knn_edges(pts, 10).keys()


def test_approximate_recall():
    pts = np.random.default_rng(0).normal(size=(1000, 3))
    exact = graph_edges(build_knn_graph(pts, 10, mode="exact")).keys()
    approx = graph_edges(build_knn_graph(pts, 10, mode="approximate", seed=0)).keys()
    recall = len(exact & approx) / len(exact)
    assert recall >= 0.95


def test_approximate_is_symmetric_and_deterministic():
    pts = np.random.default_rng(1).normal(size=(600, 5))
    a = build_knn_graph(pts, 8, mode="approximate", seed=3)
    b = build_knn_graph(pts, 8, mode="approximate", seed=3)
    a.check()
    assert graph_edges(a) == graph_edges(b)


def _graph(n, triples):
    i, j, w = zip(*triples)
    W = sp.coo_matrix((w + w, (i + j, j + i)), shape=(n, n)).tocsr()
    return ProximityGraph(W, np.ones(n))


def test_weak_edge_removed_when_weak_at_both_ends():
    g = _graph(5, [(0, 1, 1.0), (0, 2, 0.001), (0, 3, 1.0), (2, 4, 1.0)])
    h = filter_weak_edges(g, 0.05)
    assert (0, 2) not in graph_edges(h)
    assert len(graph_edges(h)) == 3
    assert h.node_count == 5


def test_edge_weak_at_one_end_is_kept():
    g = _graph(4, [(0, 1, 1.0), (0, 2, 0.001), (0, 3, 1.0)])
    assert graph_edges(filter_weak_edges(g, 0.05)) == graph_edges(g)


def test_theta_zero_is_identity():
    g = build_knn_graph(np.random.default_rng(2).normal(size=(50, 2)), 5)
    assert graph_edges(filter_weak_edges(g, 0.0)) == graph_edges(g)


@given(st.integers(0, 10_000), st.floats(0.01, 0.9))
def test_filter_keeps_symmetry_and_shrinks_monotonically(seed, theta):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(60, 2)) * rng.uniform(0.1, 10, size=(60, 1))
    g = build_knn_graph(pts, 6)
    h, removed = filter_to_fixed_point(g, theta)
    h.check()
    assert removed[-1] == 0
    assert all(a >= 0 for a in removed)
    assert set(graph_edges(h)) <= set(graph_edges(g))


def test_cache_round_trip(tmp_path):
    pts = np.random.default_rng(3).normal(size=(80, 3))
    g = build_knn_graph(pts, 5)
    save_graph_cache(tmp_path / "g.knn", g, pts, 5)
    h = load_graph_cache(tmp_path / "g.knn", pts)
    assert graph_edges(h) == graph_edges(g)
    with pytest.raises(GraphError):
        load_graph_cache(tmp_path / "g.knn", pts + 1.0)


def test_cache_version_rejected(tmp_path):
    (tmp_path / "g.knn").write_text("OTHER\n")
    with pytest.raises(GraphError):
        load_graph_cache(tmp_path / "g.knn")


def test_cached_builder_reuses_file(tmp_path):
    pts = np.random.default_rng(4).normal(size=(60, 2))
    a = cached_knn_graph(pts, 4, cache_dir=tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    b = cached_knn_graph(pts, 4, cache_dir=tmp_path)
    assert graph_edges(a) == graph_edges(b)

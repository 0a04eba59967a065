import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlsvm.graph import ProximityGraph, build_knn_graph
from mlsvm.partition import PartitionError, edge_cut, max_part_size, partition_graph


def test_ten_nodes_two_parts():
    pts = np.arange(10.0)[:, None]
    p = partition_graph(build_knn_graph(pts, 2), pts, 2)
    assert sorted(p.sizes.tolist()) == [5, 5]


def test_single_part_centroid_is_volume_weighted():
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 4.0]])
    g = build_knn_graph(pts, 1)
    g = ProximityGraph(g.weights, np.array([1.0, 1.0, 2.0]))
    p = partition_graph(g, pts, 1)
    np.testing.assert_allclose(p.centroids[0], [0.5, 2.0])
    assert p.cut == 0.0


def test_separated_clusters_are_not_cut():
    rng = np.random.default_rng(0)
    pts = np.vstack([rng.normal(0, 1, (50, 2)), rng.normal(100, 1, (50, 2))])
    g = build_knn_graph(pts, 5)
    assert edge_cut(g.weights, np.repeat([0, 1], 50)) == 0.0  # no inter-cluster edges exist
    p = partition_graph(g, pts, 2)
    assert p.cut == 0.0
    assert len(set(p.part[:50])) == 1 and len(set(p.part[50:])) == 1


def test_k_larger_than_n():
    pts = np.zeros((3, 1)) + np.arange(3)[:, None]
    with pytest.raises(PartitionError):
        partition_graph(build_knn_graph(pts, 1), pts, 4)


@given(st.integers(0, 10_000), st.integers(10, 300), st.integers(1, 12))
def test_balance_and_monotone_cut(seed, n, K):
    K = min(K, n)
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    g = build_knn_graph(pts, min(6, n - 1))
    p = partition_graph(g, pts, K)
    assert p.part.min() == 0 and p.part.max() == K - 1
    assert np.all(p.sizes >= 1)
    assert p.sizes.max() <= max_part_size(n, K)
    assert p.sizes.sum() == n
    assert p.cut <= p.initial_cut + 1e-9
    assert p.cut == pytest.approx(edge_cut(g.weights, p.part))


def test_disconnected_pieces_are_assigned():
    rng = np.random.default_rng(1)
    pts = np.vstack([rng.normal(0, 1, (30, 2)), rng.normal(50, 1, (7, 2)), rng.normal(-50, 1, (5, 2))])
    g = build_knn_graph(pts, 3)
    p = partition_graph(g, pts, 3)
    assert p.sizes.max() <= max_part_size(42, 3) and np.all(p.part >= 0)

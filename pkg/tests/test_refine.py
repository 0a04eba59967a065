import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from mlsvm.coarsen import InterpolationMatrix, build_interpolation, future_volumes, select_seeds
from mlsvm.config import Config
from mlsvm.graph import ProximityGraph, build_knn_graph
from mlsvm.modelsel import ParamPoint, make_validation_set
from mlsvm.qp import SvmModel
from mlsvm.refine import (
    ClassData, ModelEnsemble, PairInfo, ensemble_predict, pair_parts, refine_level,
    uncoarsen_amg, uncoarsen_iis, weighted_midpoint,
)


def path_graph(weights=(1.0, 1.0)):
    W = sp.csr_matrix(np.array([[0, weights[0], 0], [weights[0], 0, weights[1]], [0, weights[1], 0]]))
    return ProximityGraph(W, np.ones(3))


def const_model(label, dim=2):
    """A model with no support vectors that always predicts ``label``."""
    return SvmModel(np.zeros((0, dim)), np.zeros(0), float(label), 1.0, 1.0)


def pair_at(point):
    point = np.asarray(point, dtype=float)
    return PairInfo(point, point, 1.0, 1.0)


def test_iis_uncoarsening():
    g = path_graph((2.0, 1.0))  # a-b closer than b-c
    interp = InterpolationMatrix(sp.csr_matrix(np.array([[0.0], [1.0], [0.0]])), np.array([1]))
    assert uncoarsen_iis([0], interp, g, h=0).tolist() == [1]
    assert uncoarsen_iis([0], interp, g, h=1).tolist() == [0, 1]
    assert uncoarsen_iis([0], interp, g, h=5).tolist() == [0, 1, 2]


def test_iis_small_neighbourhood():
    W = sp.csr_matrix(np.array([[0, 1, 1, 1], [1, 0, 0, 0], [1, 0, 0, 0], [1, 0, 0, 0]], float))
    interp = InterpolationMatrix(sp.csr_matrix(np.array([[1.0], [0], [0], [0]])), np.array([0]))
    assert uncoarsen_iis([0], interp, ProximityGraph(W, np.ones(4)), h=5).size == 4


def test_amg_full_on_path():
    interp = build_interpolation(path_graph(), [1], r=1)
    assert uncoarsen_amg([0], interp, "full").tolist() == [0, 1, 2]
    assert uncoarsen_amg([0], interp, "sampled", budget=1).tolist() == [1]


def test_sampled_prefers_small_interpolation_weights():
    P = sp.csr_matrix(np.array([[1.0], [0.3], [0.7]]))
    interp = InterpolationMatrix(P, np.array([0]))
    assert uncoarsen_amg([0], interp, "sampled", budget=2).tolist() == [0, 1]
    assert uncoarsen_amg([0], interp, "sampled", budget=3).tolist() == [0, 1, 2]


def test_k_distant_adds_graph_neighbours():
    pts = np.arange(6.0)[:, None]
    g = build_knn_graph(pts, 1)
    P = sp.csr_matrix((np.ones(2), ([0, 1], [0, 0])), shape=(6, 1))
    interp = InterpolationMatrix(P, np.array([0]))
    assert uncoarsen_amg([0], interp, "k_distant", g, distance=1).tolist() == [0, 1, 2]
    assert uncoarsen_amg([0], interp, "k_distant", g, distance=2).tolist() == [0, 1, 2, 3]


@given(st.integers(0, 10_000))
def test_full_mode_is_union_of_column_supports(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(60, 2))
    g = build_knn_graph(pts, 5)
    S, _ = select_seeds(g, future_volumes(g), 0.5, 2.0)
    interp = build_interpolation(g, S, 2)
    sv = rng.choice(interp.P.shape[1], size=max(1, interp.P.shape[1] // 3), replace=False)
    dense = interp.P.toarray()
    want = {i for c in sv for i in range(60) if dense[i, c] != 0}
    assert set(uncoarsen_amg(sv, interp, "full").tolist()) == want


def test_weighted_midpoint_examples():
    np.testing.assert_allclose(weighted_midpoint([0, 0], [2, 0], 1, 3), [1.5, 0])
    np.testing.assert_allclose(weighted_midpoint([0, 0], [2, 4], 5, 5), [1, 2])
    np.testing.assert_allclose(weighted_midpoint([0, 0], [2, 0], 1e12, 1), [0, 0], atol=1e-11)
    with pytest.raises(ValueError):
        weighted_midpoint([0], [1], 1, 0)


@given(st.integers(0, 10_000))
def test_midpoint_on_segment(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 3))
    va, vb = rng.uniform(0.01, 100, 2)
    x = weighted_midpoint(a, b, va, vb)
    t = vb / (va + vb)
    np.testing.assert_allclose(x, a + t * (b - a), atol=1e-12)


def test_voting_examples():
    e = ModelEnsemble([const_model(1)], [pair_at([0, 0])])
    assert ensemble_predict(e, [3, 3]) == 1
    # distances 1 and 3: (1 - 1/3) / (1 + 1/3) > 0
    e = ModelEnsemble([const_model(1), const_model(-1)], [pair_at([1, 0]), pair_at([3, 0])])
    assert e.decision_function([[0, 0]])[0] == pytest.approx(0.5)
    assert ensemble_predict(e, [0, 0]) == 1
    e = ModelEnsemble([const_model(-1)] * 3, [pair_at([i, 0]) for i in range(3)])
    assert ensemble_predict(e, [5, 5], "distance_weighted") == -1
    assert ensemble_predict(e, [5, 5], "majority") == -1


def test_exact_hit_and_ties():
    e = ModelEnsemble([const_model(-1), const_model(1), const_model(1)],
                      [pair_at([0, 0]), pair_at([1, 0]), pair_at([1.1, 0])])
    assert ensemble_predict(e, [0, 0]) == -1
    assert ensemble_predict(e, [0, 0], "majority") == 1
    tie = ModelEnsemble([const_model(-1), const_model(1)], [pair_at([0, 0]), pair_at([2, 0])])
    assert ensemble_predict(tie, [1, 0]) == 1
    assert ensemble_predict(tie, [9, 9], "majority") == 1
    with pytest.raises(ValueError):
        ModelEnsemble([], [])


def test_single_model_ensemble_matches_model():
    rng = np.random.default_rng(0)
    m = SvmModel(rng.normal(size=(5, 2)), rng.normal(size=5), 0.1, 0.7, 1.0)
    e = ModelEnsemble([m], [pair_at([0, 0])])
    T = rng.normal(size=(50, 2))
    np.testing.assert_array_equal(e.predict(T), m.predict(T))


@given(st.integers(0, 10_000), st.randoms())
def test_permutation_invariance(seed, rnd):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 5))
    models = [const_model(int(rng.choice([-1, 1]))) for _ in range(k)]
    pairs = [pair_at(rng.integers(-2, 3, size=2)) for _ in range(k)]
    T = np.vstack([rng.integers(-2, 3, size=(10, 2)), rng.normal(size=(10, 2))]).astype(float)
    e1 = ModelEnsemble(models, pairs)
    order = list(range(k))
    rnd.shuffle(order)
    e2 = ModelEnsemble([models[i] for i in order], [pairs[i] for i in order])
    for rule in ("distance_weighted", "majority"):
        np.testing.assert_array_equal(e1.predict(T, rule), e2.predict(T, rule))


def test_equidistant_tie_ignores_model_order():
    labels = [1, -1, 1, -1]
    centers = [(1, 2), (2, 1), (-2, 1), (-1, -2)]
    models = [const_model(l) for l in labels]
    pairs = [pair_at(np.array(c)) for c in centers]
    t = np.array([[0.0, 0.0], [0.3, 0.7]])
    base = ModelEnsemble(models, pairs).predict(t)
    flipped = ModelEnsemble(models[::-1], pairs[::-1]).predict(t)
    np.testing.assert_array_equal(base, flipped)
    assert base[0] == 1  # four equal distances, labels cancel, sign(0) -> +1


def test_symmetric_pairing():
    cp = np.array([[0.0, 1.0], [0.0, -1.0]])
    cn = np.array([[1.0, 1.0], [1.0, -1.0]])
    assert pair_parts(cp, cn) == [(0, 0), (1, 1)]


def _class(points, k=5):
    g = build_knn_graph(points, k)
    return ClassData(points, np.ones(points.shape[0]), g)


def test_small_set_runs_local_search(small_cfg):
    rng = np.random.default_rng(0)
    pos, neg = _class(rng.normal(1, 1, (60, 2))), _class(rng.normal(-1, 1, (40, 2)))
    X = np.vstack([pos.points, neg.points])
    y = np.array([1] * 60 + [-1] * 40)
    plan = lambda pts, lbl: make_validation_set("ff", pts, lbl, X, y)
    r = refine_level(pos, neg, np.arange(60), np.arange(40), ParamPoint(0.0, 0.0), small_cfg,
                     plan, level=1, metric="gmean_then_sn")
    assert r.kind == "single" and r.trainings == 13
    assert r.sv_pos.max() < 60 and r.sv_neg.max() < 40


def test_large_set_builds_pair_ensemble():
    cfg = Config(q_t=3000, part_size=1000)
    rng = np.random.default_rng(1)
    pos, neg = _class(rng.normal(1, 1, (6500, 2))), _class(rng.normal(-1, 1, (5500, 2)))
    r = refine_level(pos, neg, np.arange(6500), np.arange(5500), ParamPoint(0.0, 0.0), cfg,
                     None, level=0, metric="gmean")
    assert r.kind == "ensemble"
    kp, kn = r.extra["parts_pos"], r.extra["parts_neg"]
    assert (kp, kn) == (6, 6)
    assert 1 <= len(r.model.models) <= kp + kn
    assert r.trainings == len(r.model.models)  # one fit per pair, no search
    for m in r.model.models:
        assert (m.C, m.gamma) == (1.0, 1.0)


def test_single_class_set_keeps_inherited(small_cfg, caplog):
    rng = np.random.default_rng(2)
    pos, neg = _class(rng.normal(size=(20, 2))), _class(rng.normal(size=(20, 2)))
    old = const_model(1)
    r = refine_level(pos, neg, np.arange(20), np.zeros(0, np.int64), ParamPoint(1.0, 1.0),
                     small_cfg, None, 0, "gmean", fallback=old)
    assert r.kind == "inherited" and r.model is old and r.trainings == 0
    assert "single class" in caplog.text

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlsvm.data import (
    DataError, Dataset, gen_imbalanced_mixture, gen_synthetic, kfold_split, load_csv, save_csv,
    zscore_normalize,
)


def test_load_three_rows(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0.5,1.0,1\n2.0,3.0,-1\n4.0,5.0,1\n")
    d = load_csv(p)
    assert (d.n, d.n_pos, d.n_neg, d.d) == (3, 2, 1, 2)
    assert d.points[1].tolist() == [2.0, 3.0]


def test_zero_one_labels_are_remapped(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,0.1,2\n0,0.2,3\n")
    d = load_csv(p, label_column=0)
    assert d.labels.tolist() == [1, -1]
    assert d.points.tolist() == [[0.1, 2.0], [0.2, 3.0]]


def test_header_is_skipped(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,y\n1,2,1\n3,4,-1\n")
    assert load_csv(p, has_header=True).n == 2


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("1,2,1\n1,abc,-1\n", "row 1"),
        ("1,2,1\n1,2\n", "row 1"),
        ("1,2,1\n1,2,7\n", "row 1"),
    ],
)
def test_bad_rows_name_the_row(tmp_path, text, fragment):
    p = tmp_path / "d.csv"
    p.write_text(text)
    with pytest.raises(DataError, match=fragment):
        load_csv(p)


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="missing"):
        load_csv(tmp_path / "nope.csv")


def test_csv_round_trip(tmp_path):
    d = gen_synthetic("twonorm", 50, 3)
    save_csv(d, tmp_path / "t.csv")
    e = load_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(d.points, e.points)
    np.testing.assert_array_equal(d.labels, e.labels)


def test_zscore_hand_values():
    pts = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
    z = zscore_normalize(Dataset(pts, [1, -1, 1]))
    np.testing.assert_allclose(z.points[:, 0], [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)
    np.testing.assert_array_equal(z.points[:, 1], 0.0)
    assert z.normalization.std[0] == pytest.approx(np.sqrt(2 / 3))


@given(st.integers(0, 10_000))
def test_zscore_idempotent(seed):
    rng = np.random.default_rng(seed)
    d = Dataset(rng.normal(3, 2, size=(20, 3)), np.where(rng.random(20) < 0.5, 1, -1))
    once = zscore_normalize(d)
    twice = zscore_normalize(once)
    np.testing.assert_allclose(once.points, twice.points, atol=1e-12)
    np.testing.assert_allclose(once.points.mean(axis=0), 0.0, atol=1e-12)


def test_kfold_small_balanced():
    d = Dataset(np.arange(10.0)[:, None], [1] * 5 + [-1] * 5)
    f = kfold_split(d, 5, seed=0)
    for k in range(5):
        te = f.test_indices(k)
        assert te.size == 2
        assert sorted(d.labels[te].tolist()) == [-1, 1]
    np.testing.assert_array_equal(f.fold_id, kfold_split(d, 5, seed=0).fold_id)


def test_kfold_twonorm_sizes():
    d = Dataset(np.zeros((7400, 1)), [1] * 3703 + [-1] * 3697)
    f = kfold_split(d, 10, seed=4)
    for cls in (1, -1):
        counts = np.bincount(f.fold_id[d.labels == cls], minlength=10)
        assert counts.max() - counts.min() <= 1


def test_kfold_class_too_small():
    d = Dataset(np.zeros((6, 1)), [1, 1, -1, -1, -1, -1])
    with pytest.raises(DataError):
        kfold_split(d, 3, seed=0)


@given(st.integers(2, 7), st.integers(0, 1000), st.integers(0, 50))
def test_kfold_partitions_and_stratifies(k, seed, extra):
    n = 2 * k + extra
    rng = np.random.default_rng(seed)
    labels = np.where(rng.random(n) < 0.5, 1, -1)
    labels[:k] = 1
    labels[k : 2 * k] = -1
    d = Dataset(np.zeros((n, 1)), labels)
    f = kfold_split(d, k, seed)
    assert set(np.unique(f.fold_id)) == set(range(k))
    all_test = np.concatenate([f.test_indices(i) for i in range(k)])
    assert sorted(all_test.tolist()) == list(range(n))
    for cls in (1, -1):
        c = np.bincount(f.fold_id[labels == cls], minlength=k)
        assert c.max() - c.min() <= 1


@pytest.mark.parametrize("kind, n_pos", [("twonorm", 3703), ("ringnorm", 3664)])
def test_synthetic_class_sizes(kind, n_pos):
    d = gen_synthetic(kind, 7400, seed=1)
    assert (d.n, d.d, d.n_pos, d.n_neg) == (7400, 20, n_pos, 7400 - n_pos)


def test_synthetic_is_deterministic():
    a = gen_synthetic("ringnorm", 300, seed=9)
    b = gen_synthetic("ringnorm", 300, seed=9)
    assert a.points.tobytes() == b.points.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_synthetic_moments():
    d = gen_synthetic("twonorm", 20000, seed=2)
    a = 2 / np.sqrt(20)
    np.testing.assert_allclose(d.points[d.labels == 1].mean(axis=0), a, atol=0.05)
    np.testing.assert_allclose(d.points[d.labels == -1].mean(axis=0), -a, atol=0.05)
    r = gen_synthetic("ringnorm", 20000, seed=2)
    assert r.points[r.labels == -1].std() == pytest.approx(2.0, rel=0.03)
    assert r.points[r.labels == 1].std() == pytest.approx(1.0, rel=0.03)


def test_imbalanced_mixture_ratio():
    d = gen_imbalanced_mixture(2000, seed=0)
    assert d.n_pos == 100 and d.n_neg == 1900


def test_labels_validated():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), [1, 2])

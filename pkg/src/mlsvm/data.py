"""Dataset container, CSV ingestion, z-score normalization, stratified folds
and the twonorm / ringnorm synthetic generators."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed input data."""


@dataclass(frozen=True)
class Normalization:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        out = np.zeros_like(points)
        nz = self.std > 0
        out[:, nz] = (points[:, nz] - self.mean[nz]) / self.std[nz]
        return out


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray
    labels: np.ndarray
    normalization: Normalization | None = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise DataError("points must be a 2-d matrix")
        lab = np.asarray(self.labels).astype(np.int64).ravel()
        if lab.shape[0] != pts.shape[0]:
            raise DataError("points and labels differ in length")
        if not np.all((lab == 1) | (lab == -1)):
            raise DataError("labels must be in {-1, +1}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def n_pos(self) -> int:
        return int(np.sum(self.labels == 1))

    @property
    def n_neg(self) -> int:
        return int(np.sum(self.labels == -1))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.points[idx], self.labels[idx], self.normalization)


@dataclass(frozen=True)
class FoldAssignment:
    fold_id: np.ndarray
    k: int
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_id == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_id != fold)


def _parse_label(text: str, row: int) -> int:
    try:
        val = float(text)
    except ValueError:
        raise DataError(f"row {row}: label {text!r} is not numeric") from None
    if val == 1:
        return 1
    if val in (-1, 0):
        return -1
    raise DataError(f"row {row}: label {text!r} outside accepted set {{-1, 0, 1}}")


def load_csv(path, label_column: int = -1, has_header: bool = False) -> Dataset:
    """Read a comma-separated file into a :class:`Dataset`.

    ``label_column`` may be negative (counted from the end). Labels ``0`` are
    remapped to ``-1``. Row numbers in error messages are 0-based data rows.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    feats, labels = [], []
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if has_header:
            next(reader, None)
        for row, fields in enumerate(reader):
            if not fields or all(not f.strip() for f in fields):
                continue
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise DataError(f"row {row}: expected {width} fields, got {len(fields)}")
            col = label_column % width
            labels.append(_parse_label(fields[col].strip(), row))
            vals = []
            for j, f in enumerate(fields):
                if j == col:
                    continue
                try:
                    vals.append(float(f))
                except ValueError:
                    raise DataError(f"row {row}: non-numeric feature {f!r} in column {j}") from None
            feats.append(vals)
    if len(feats) < 2:
        raise DataError("dataset needs at least 2 rows")
    return Dataset(np.array(feats, dtype=float), np.array(labels, dtype=np.int64))


def save_csv(d: Dataset, path, header: bool = False) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"f{j}" for j in range(d.d)] + ["label"])
        for x, y in zip(d.points, d.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def fit_normalization(points: np.ndarray) -> Normalization:
    points = np.asarray(points, dtype=float)
    return Normalization(points.mean(axis=0), points.std(axis=0))


def zscore_normalize(d: Dataset) -> Dataset:
    """Population-stddev z-score. Constant columns become zero."""
    norm = fit_normalization(d.points)
    return Dataset(norm.apply(d.points), d.labels, norm)


def kfold_split(d: Dataset, k: int, seed: int) -> FoldAssignment:
    """Stratified k-fold: each class is shuffled and dealt round-robin."""
    if k < 2:
        raise DataError("k must be >= 2")
    rng = np.random.default_rng(seed)
    fold = np.empty(d.n, dtype=np.int64)
    for cls in (1, -1):
        idx = np.flatnonzero(d.labels == cls)
        if idx.size < k:
            raise DataError(f"class {cls:+d} has {idx.size} samples, fewer than k={k}")
        perm = rng.permutation(idx)
        fold[perm] = np.arange(perm.size) % k
    return FoldAssignment(fold, k, seed)


# Table-1 positive-class fractions of the 7400-point benchmark sets.
_POS_FRACTION = {"twonorm": 3703 / 7400, "ringnorm": 3664 / 7400}


def gen_synthetic(kind: str, n: int, seed: int, d: int = 20) -> Dataset:
    """Breiman-style twonorm / ringnorm samples with d=20 features."""
    if kind not in _POS_FRACTION:
        raise DataError(f"unknown synthetic kind {kind!r}")
    if n < 2:
        raise DataError("n must be >= 2")
    rng = np.random.default_rng(seed)
    n_pos = int(round(n * _POS_FRACTION[kind]))
    n_pos = min(max(n_pos, 1), n - 1)
    n_neg = n - n_pos
    a = 2.0 / np.sqrt(d)
    if kind == "twonorm":
        pos = rng.standard_normal((n_pos, d)) + a
        neg = rng.standard_normal((n_neg, d)) - a
    else:
        pos = rng.standard_normal((n_pos, d)) + a
        neg = 2.0 * rng.standard_normal((n_neg, d))
    points = np.vstack([pos, neg])
    labels = np.concatenate([np.ones(n_pos, np.int64), -np.ones(n_neg, np.int64)])
    perm = rng.permutation(n)
    return Dataset(points[perm], labels[perm])


def gen_imbalanced_mixture(n: int, seed: int, minority_fraction: float = 0.05,
                           d: int = 10, separation: float = 1.5) -> Dataset:
    """Two overlapping Gaussian blobs with a rare positive class."""
    rng = np.random.default_rng(seed)
    n_pos = max(1, int(round(n * minority_fraction)))
    n_neg = n - n_pos
    shift = np.zeros(d)
    shift[0] = separation
    pos = rng.standard_normal((n_pos, d)) + shift
    neg = rng.standard_normal((n_neg, d))
    points = np.vstack([pos, neg])
    labels = np.concatenate([np.ones(n_pos, np.int64), -np.ones(n_neg, np.int64)])
    perm = rng.permutation(n)
    return Dataset(points[perm], labels[perm])


def class_indices(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.flatnonzero(labels == 1), np.flatnonzero(labels == -1)


__all__ = [
    "DataError", "Dataset", "FoldAssignment", "Normalization", "class_indices",
    "fit_normalization", "gen_imbalanced_mixture", "gen_synthetic", "kfold_split",
    "load_csv", "save_csv", "zscore_normalize",
]

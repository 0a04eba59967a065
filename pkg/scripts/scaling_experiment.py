"""Training time on growing prefixes of a large twonorm sample."""

import argparse
import time

import numpy as np

from mlsvm.config import Config
from mlsvm.data import gen_synthetic
from mlsvm.driver import mlsvm_predict, mlsvm_train
from mlsvm.modelsel import compute_metrics


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--fractions", type=float, nargs="+", default=[0.2, 0.4, 0.6, 0.8, 1.0])
    args = ap.parse_args()

    d = gen_synthetic("twonorm", args.n, seed=args.seed)
    test = gen_synthetic("twonorm", 5000, seed=args.seed + 1)
    base = None
    for frac in args.fractions:
        sub = d.subset(np.arange(int(frac * d.n)))
        t0 = time.perf_counter()
        c = mlsvm_train(sub, Config())
        secs = time.perf_counter() - t0
        base = base or secs
        g = compute_metrics(mlsvm_predict(c, test.points)[0], test.labels).gmean
        print(f"n={sub.n:7d}  {secs:7.1f} s  ratio {secs / base:5.2f}  depth {c.depth}  test gmean {g:.4f}")


if __name__ == "__main__":
    main()

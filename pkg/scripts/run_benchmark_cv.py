"""10-fold cross-validation of the multilevel classifier on twonorm or ringnorm."""

import argparse
import json
import time

from mlsvm.config import Config
from mlsvm.data import gen_synthetic
from mlsvm.driver import cross_validate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kind", choices=("twonorm", "ringnorm"), default="twonorm")
    ap.add_argument("--n", type=int, default=7400)
    ap.add_argument("--folds", type=int, default=10)
    ap.add_argument("--data-seed", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    d = gen_synthetic(args.kind, args.n, seed=args.data_seed)
    t0 = time.perf_counter()
    res = cross_validate(d, Config(threads=args.threads), k=args.folds, seed=args.seed)
    wall = time.perf_counter() - t0
    for i, f in enumerate(res.folds):
        print(f"fold {i:2d}  gmean {f.gmean:.4f}  depth {res.depths[i]}  level {res.chosen_levels[i]}")
    print(json.dumps({"kind": args.kind, "n": args.n, "mean": res.mean, "std": res.std,
                      "seconds": round(wall, 1)}, indent=2))


if __name__ == "__main__":
    main()

"""Coarse accuracy of a 3-level hierarchy against the flat (1-level) baseline.

    python scripts/trend_comparison.py --seeds 10 --out runs/trend.csv

Prints one line per seed and a summary; the CSV holds the same numbers.
"""

import argparse
import csv
import time

import numpy as np

from omh import optim
from omh.config import ExperimentConfig
from omh.synthdata import generate


def coarse_accuracy(cfg, level):
    state, _, _ = optim.train(cfg)
    rows = optim.evaluate_levels(state, generate(cfg.synth_params(), cfg.dataset_seed))
    return next(r["accuracy"] for r in rows if r["level"] == level and r["labels"] == "coarse")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--depth", type=int, default=3)
    ap.add_argument("--level", default="probe", help='evaluated head: "probe" or a level index')
    ap.add_argument("--out")
    args = ap.parse_args()
    level = args.level if args.level == "probe" else int(args.level)

    t0 = time.perf_counter()
    rows = []
    for seed in range(args.seeds):
        cfg = ExperimentConfig(seed=seed, depth=args.depth)
        deep = coarse_accuracy(cfg, level)
        flat = coarse_accuracy(cfg.with_values(depth=1), level if level == "probe" else 0)
        rows.append((seed, deep, flat))
        print(f"seed {seed}: depth {args.depth} {deep:.4f}  depth 1 {flat:.4f}")
    deep = np.array([r[1] for r in rows])
    flat = np.array([r[2] for r in rows])
    print(f"mean {deep.mean():.4f} vs {flat.mean():.4f}, "
          f"wins {(deep >= flat).sum()}/{len(rows)}, {time.perf_counter() - t0:.1f}s")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", f"depth{args.depth}_accuracy", "depth1_accuracy"])
            w.writerows(rows)


if __name__ == "__main__":
    main()

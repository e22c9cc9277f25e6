"""Plan entropy and row support against the transport temperature.

Two views: random cost matrices (solver only) and trained hierarchies.

    python scripts/temperature_sweep.py --trained
"""

import argparse

import numpy as np

from omh import optim
from omh.config import ExperimentConfig
from omh.hierarchy import build_plans, row_support
from omh.transport import SinkhornSettings, plan_entropy, sinkhorn

TEMPERATURES = [0.005, 0.01, 0.02, 0.05, 0.1, 0.5, 1.0]


def random_costs(n=20, shape=(8, 16), seed=0):
    rng = np.random.default_rng(seed)
    costs = [rng.random(shape) for _ in range(n)]
    print("lambda   entropy  support  iterations")
    for lam in TEMPERATURES:
        plans = [sinkhorn(c, SinkhornSettings(temperature=lam)) for c in costs]
        print(f"{lam:<8} {np.mean([plan_entropy(p) for p in plans]):.4f}   "
              f"{np.mean([row_support(p).mean() for p in plans]):.2f}     "
              f"{np.mean([p.iterations_run for p in plans]):.0f}")


def trained(seed=0):
    print("lambda   entropy(0->1)  support(0->1)  coarse acc")
    for lam in TEMPERATURES[2:5]:
        cfg = ExperimentConfig(seed=seed, ot_temperature=lam)
        state, _, metrics = optim.train(cfg)
        plan = build_plans(state.stack, optim.sinkhorn_settings(cfg)).plans[0]
        acc = [m["accuracy"] for m in metrics
               if m["level"] == "probe" and m["labels"] == "coarse"][-1]
        print(f"{lam:<8} {plan_entropy(plan):.4f}         {row_support(plan).mean():.2f}"
              f"           {acc:.4f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trained", action="store_true", help="also train one model per temperature")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    random_costs(seed=args.seed)
    if args.trained:
        trained(args.seed)

"""Simulated capture success rate under easy and hard conditions.

The easy condition has no bearing noise and a slow target; the hard one has
0.05 rad noise and a 4 m/s target.

    python scripts/success_rate.py --trials 50
"""

import argparse

from mavcapture.harness.batch import monte_carlo
from mavcapture.harness.config import load_config, replace_path


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/batch-quick.yaml")
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--adjudication", default="fast", choices=["fast", "full"])
    args = ap.parse_args()

    base = replace_path(load_config(args.config), **{"capture.adjudication": args.adjudication})
    easy = replace_path(base, **{"perception.sigma_g": 0.0, "target.speed": 1.0})
    hard = replace_path(base, **{"perception.sigma_g": 0.05, "target.speed": 4.0})
    for name, cfg in (("easy", easy), ("hard", hard)):
        print(f"{name:5s} {monte_carlo(cfg, args.trials, args.seed).table()}")


if __name__ == "__main__":
    main()

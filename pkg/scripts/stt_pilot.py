"""Pilot runs of the distributed estimator on the four-pursuer circle scenario.

Prints per-seed RMSE over the final window and the batch wall-clock, and can
sweep the forgetting factor gamma2.

    python scripts/stt_pilot.py --seeds 20
    python scripts/stt_pilot.py --seeds 3 --gamma2 1.0 0.95 0.9 0.8 0.7
"""

import argparse
import time

import numpy as np

from mavcapture.harness.config import preset, replace_path
from mavcapture.harness.scenario import run_scenario


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--gamma2", type=float, nargs="*", default=None)
    ap.add_argument("--sigma-g", type=float, default=0.01)
    args = ap.parse_args()

    base = replace_path(preset("sim4"), **{"capture.enabled": False, "perception.sigma_g": args.sigma_g})
    for g2 in args.gamma2 or [base.estimator.gamma2]:
        cfg = replace_path(base, **{"estimator.gamma2": g2})
        pos, vel = [], []
        t0 = time.perf_counter()
        for seed in range(args.seeds):
            cfg.seed = seed
            m = run_scenario(cfg)
            pos.append(m.mean_position_rmse)
            vel.append(m.mean_velocity_rmse)
        wall = time.perf_counter() - t0
        print(
            f"gamma2={g2:<5} pos RMSE {np.mean(pos):.4f} m (max {np.max(pos):.4f})  "
            f"vel RMSE {np.mean(vel):.4f} m/s (max {np.max(vel):.4f})  {wall:.1f} s for {args.seeds} seeds"
        )


if __name__ == "__main__":
    main()

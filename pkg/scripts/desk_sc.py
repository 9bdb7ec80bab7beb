"""Desk-scale SC training: 150 ten-minute episodes at v/c 0.6, with learning-curve chart.

Resumes from ``<out>/sc.ckpt`` when present.

    python scripts/desk_sc.py --out runs/desk_sc
"""

import argparse
import time
from pathlib import Path

import numpy as np

from tsprl.campaign import train_campaign
from tsprl.charts import learning_curve_chart
from tsprl.config import load


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk_sc")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--episodes", type=int)
    args = ap.parse_args()

    cfg = load("desk-sc").with_overrides({"run.seed": str(args.seed)})
    out = Path(args.out)
    t0 = time.perf_counter()
    res = train_campaign(cfg, "sc", out, episodes=args.episodes)
    learning_curve_chart(out / "sc_curve.csv", out / "sc_curve.svg")
    r = np.array([rec.avg_step_reward for rec in res.records])
    print(f"{len(r)} episodes in {time.perf_counter() - t0:.0f} s")
    print(f"mean reward, first 10: {r[:10].mean():.2f}   last 10: {r[-10:].mean():.2f}")
    if len(r) >= 10:
        ma = np.convolve(r, np.ones(10) / 10, mode="valid")
        print("10-episode moving average every 10 episodes:", np.round(ma[::10], 1))


if __name__ == "__main__":
    main()

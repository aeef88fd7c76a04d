"""Train the same scenario under several seeds and summarize convergence.

Produces per-seed training curves, a summary CSV with the final smoothed
rewards and their spread around the median, and (optionally) a combined
reward-curve plot.

Usage:
    python3 scripts/convergence_study.py --out runs/convergence \
        --seeds 7 --iterations 500
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from ecoplatoon.ars import save_checkpoint, train
from ecoplatoon.config import EnvBuilder, load_scenario
from ecoplatoon.recording import write_table, write_training_curve


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--config", type=Path, default=None,
                        help="scenario TOML (defaults used when omitted)")
    parser.add_argument("--seeds", type=int, default=7,
                        help="number of training seeds, starting at 0")
    parser.add_argument("--iterations", type=int, default=500)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--plot", action="store_true",
                        help="also write curves.png (needs matplotlib)")
    return parser.parse_args()


def main() -> int:
    args = parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    curves = {}
    for seed in range(args.seeds):
        scenario = load_scenario(args.config, {
            "ars": {"base_seed": seed, "iterations": args.iterations}})
        policy, reports = train(scenario.ars, EnvBuilder(scenario),
                                jobs=args.jobs)
        write_training_curve(args.out / f"curve_seed{seed}.csv", reports)
        save_checkpoint(args.out / f"checkpoint_seed{seed}.bin", policy,
                        scenario.to_dict())
        curves[seed] = [r.smoothed_reward for r in reports]
        rows.append({"seed": seed,
                     "final_smoothed_reward": reports[-1].smoothed_reward,
                     "final_mean_reward": reports[-1].mean_reward})
        print(f"seed {seed}: smoothed {reports[-1].smoothed_reward:.2f}")

    finals = np.array([row["final_smoothed_reward"] for row in rows])
    median = float(np.median(finals))
    for row in rows:
        row["relative_spread"] = \
            abs(row["final_smoothed_reward"] - median) / abs(median)
    write_table(args.out / "summary.csv", rows)
    print(f"median {median:.2f}, worst relative spread "
          f"{max(r['relative_spread'] for r in rows):.3f}")

    if args.plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(8, 4.5))
        for seed, values in curves.items():
            ax.plot(values, label=f"seed {seed}", linewidth=1.0)
        ax.set_xlabel("iteration")
        ax.set_ylabel("smoothed episode reward")
        ax.legend(ncol=2, fontsize=8)
        fig.tight_layout()
        fig.savefig(args.out / "curves.png")
        print(f"wrote {args.out / 'curves.png'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

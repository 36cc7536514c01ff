#!/usr/bin/env python3
"""Quick-look plots from a walk/perturb output directory (convenience only;
the CSV files are the actual interface)."""

import argparse
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir", help="directory with metrics.csv / trajectory.csv")
    ap.add_argument("--save", default=None, help="output image (default: <out_dir>/rollout.png)")
    args = ap.parse_args()

    metrics = np.genfromtxt(os.path.join(args.out_dir, "metrics.csv"), delimiter=",", names=True)
    fig, axes = plt.subplots(3, 1, figsize=(9, 9), sharex=True)

    ax = axes[0]
    ax.plot(metrics["time"], metrics["zmp_x"], label="zmp x")
    ax.plot(metrics["time"], metrics["pref_x"], "--", label="ref x")
    ax.plot(metrics["time"], metrics["zmp_y"], label="zmp y")
    ax.plot(metrics["time"], metrics["pref_y"], "--", label="ref y")
    ax.set_ylabel("ZMP [m]")
    ax.legend(ncol=4, fontsize=8)

    axes[1].semilogy(metrics["time"], metrics["residual_cost"])
    axes[1].set_ylabel("residual cost")

    axes[2].plot(metrics["time"], metrics["iters"], ".-")
    axes[2].set_ylabel("DDP iterations")
    axes[2].set_xlabel("time [s]")

    summary_path = os.path.join(args.out_dir, "summary.json")
    if os.path.exists(summary_path):
        with open(summary_path) as f:
            agg = json.load(f).get("aggregates", {})
        fig.suptitle(f"mean iters {agg.get('mean_iters', 0):.2f}, "
                     f"max violation {agg.get('max_violation', 0):.1e}")
    target = args.save or os.path.join(args.out_dir, "rollout.png")
    fig.tight_layout()
    fig.savefig(target, dpi=130)
    print(f"wrote {target}")


if __name__ == "__main__":
    main()

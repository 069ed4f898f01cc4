#!/usr/bin/env python3
"""Plot the tables written by `hubgraph eval --ablation --out DIR`.

usage: plot_ablation.py DIR [--out FILE]
"""
import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("dir", type=Path)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    out = args.out or args.dir / "ablation.png"

    curve = pd.read_csv(args.dir / "curve.tsv", sep="\t")
    degrees = pd.read_csv(args.dir / "degrees.tsv", sep="\t")
    stages = pd.read_csv(args.dir / "stages.tsv", sep="\t")

    fig, (ax1, ax2, ax3) = plt.subplots(1, 3, figsize=(16, 4.5))

    for (variant, mode, alpha), g in curve.groupby(["variant", "mode", "alpha"]):
        g = g.sort_values("ef")
        label = f"{variant} {mode}" + ("" if mode == "exact_bestfirst" else f" a={alpha:g}")
        ax1.plot(g["recomputations"], g["recall"], marker="o", ms=3, label=label)
    ax1.set_xscale("log")
    ax1.set_xlabel("recomputations / query")
    ax1.set_ylabel("recall@k")
    ax1.legend(fontsize=6)

    for variant, g in degrees.groupby("variant"):
        ax2.plot(g["degree"], g["count"], label=variant)
    ax2.set_yscale("log")
    ax2.set_xlabel("out-degree")
    ax2.set_ylabel("nodes")
    ax2.legend(fontsize=8)

    s = stages[stages["stage"] != "wall"]
    ax3.bar(s["stage"], s["seconds"])
    ax3.set_ylabel("seconds")
    ax3.set_title("stage breakdown", fontsize=9)

    fig.tight_layout()
    fig.savefig(out, dpi=130)
    print(out)


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Plot the CSVs written by `bprune report` (and the acceptance run).

Usage: plot_report.py REPORT_DIR [--out OUT_DIR] [--pairs stability_pairs.csv]
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402


def plot_retention(df: pd.DataFrame, out: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for kind, g in df.groupby("kind"):
        ax.plot(g["layer"], g["ratio"], marker="o", label=kind)
    ax.set_xlabel("layer")
    ax.set_ylabel("keep ratio")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "retention.png", dpi=120)
    plt.close(fig)


def plot_stability(df: pd.DataFrame, out: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for kind, g in df.groupby("kind"):
        ax.plot(g["step"], g["stability"], marker=".", label=kind)
    ax.set_xlabel("step")
    ax.set_ylabel("mask stability")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "stability.png", dpi=120)
    plt.close(fig)


def plot_loss(df: pd.DataFrame, out: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(df["step"], df["loss"], linewidth=0.6, alpha=0.5, label="step")
    ax.plot(df["step"], df["loss"].rolling(50, min_periods=1).mean(), label="rolling mean (50)")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "loss.png", dpi=120)
    plt.close(fig)


def plot_selection_bias(df: pd.DataFrame, out: Path) -> None:
    pivot = df.pivot(index="rank", columns="kind", values="budget_share")
    ax = pivot.plot(kind="bar", stacked=True, figsize=(5, 3.5))
    ax.set_ylabel("share of consumed budget")
    ax.figure.tight_layout()
    ax.figure.savefig(out / "selection_bias.png", dpi=120)
    plt.close(ax.figure)


def plot_pairs(df: pd.DataFrame, out: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for (rank, seed), g in df.groupby(["rank", "seed"]):
        ax.plot(g["step"], g["stability"], label=f"{rank} seed {seed}",
                linestyle="-" if rank == "p" else "--")
    ax.set_xlabel("step")
    ax.set_ylabel("mask stability (all units)")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(out / "stability_pairs.png", dpi=120)
    plt.close(fig)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("report_dir", type=Path)
    parser.add_argument("--out", type=Path, default=None)
    parser.add_argument("--pairs", type=Path, default=None)
    args = parser.parse_args()
    out = args.out or args.report_dir
    out.mkdir(parents=True, exist_ok=True)

    plots = {
        "retention.csv": plot_retention,
        "stability.csv": plot_stability,
        "loss.csv": plot_loss,
        "selection_bias.csv": plot_selection_bias,
    }
    for name, fn in plots.items():
        path = args.report_dir / name
        if path.exists():
            fn(pd.read_csv(path), out)
            print(f"wrote {out / (path.stem + '.png')}")
    if args.pairs:
        plot_pairs(pd.read_csv(args.pairs), out)
        print(f"wrote {out / 'stability_pairs.png'}")


if __name__ == "__main__":
    main()

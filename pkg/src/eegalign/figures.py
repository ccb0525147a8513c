"""Matplotlib figures rendered next to the delimited outputs.

Every report path (train, eval, sweep) drops a figure file alongside its
CSV so results are inspectable without loading anything.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def loss_curve(rows: list[dict], out_path) -> None:
    """Training loss (and eval accuracy when logged) over epochs."""
    epochs = [r["epoch"] for r in rows]
    losses = [r["loss"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(epochs, losses, lw=1.2, color="tab:blue", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    evals = [(r["epoch"], r["top1"]) for r in rows if r.get("top1") is not None]
    if evals:
        ax2 = ax.twinx()
        ax2.plot(*zip(*evals), lw=1.0, marker="o", ms=3, color="tab:orange",
                 label="top-1")
        ax2.set_ylabel("top-1 accuracy")
        ax2.set_ylim(0, 1.02)
    ax.set_title("training trajectory")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def topk_bars(accuracies: dict[int, float], n_way: int, out_path) -> None:
    """Bar chart of top-k retrieval accuracy with the chance level marked."""
    ks = sorted(accuracies)
    vals = [accuracies[k] for k in ks]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar([f"top-{k}" for k in ks], vals, color="tab:blue", width=0.55)
    for i, v in enumerate(vals):
        ax.text(i, v + 0.01, f"{v:.1%}", ha="center", fontsize=9)
    ax.axhline(1.0 / n_way, color="tab:red", ls="--", lw=1,
               label=f"chance ({1.0 / n_way:.1%})")
    ax.set_ylim(0, 1.08)
    ax.set_ylabel("accuracy")
    ax.set_title(f"{n_way}-way zero-shot retrieval")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def sweep_plot(axis_name: str, values, means: dict[int, list], out_path) -> None:
    """Mean top-k accuracy against the swept axis (one line per k)."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    xs = np.arange(len(values))
    for k, ys in sorted(means.items()):
        ax.plot(xs, ys, marker="o", ms=4, label=f"top-{k}")
    ax.set_xticks(xs)
    ax.set_xticklabels([str(v) for v in values], rotation=20)
    ax.set_xlabel(axis_name)
    ax.set_ylabel("mean accuracy over seeds")
    ax.set_ylim(0, 1.02)
    ax.legend(frameon=False, fontsize=8)
    ax.set_title(f"sweep over {axis_name}")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)

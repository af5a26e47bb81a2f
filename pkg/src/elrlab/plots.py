"""Render per-run report figures next to the metrics CSV."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def render_run_figures(rows, out_dir: str) -> list:
    """Write loss, accuracy, and memorization curves as PNGs.

    Returns the list of files written. The memorization figure is skipped
    when the run had no flipped labels.
    """
    os.makedirs(out_dir, exist_ok=True)
    epochs = [r.epoch for r in rows]
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r.train_total for r in rows], label="train total")
    ax.plot(epochs, [r.train_ce for r in rows], label="train CE", linestyle="--")
    ax.plot(epochs, [r.test_total for r in rows], label="test total")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    ax.set_title("Training and test loss")
    fig.tight_layout()
    path = os.path.join(out_dir, "loss_curves.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r.top1 for r in rows], label="top-1")
    ax.plot(epochs, [r.top5 for r in rows], label="top-5")
    ax.set_xlabel("epoch")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1)
    ax.legend()
    ax.set_title("Test accuracy")
    fig.tight_layout()
    path = os.path.join(out_dir, "accuracy.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    if any(not r.memorization.empty for r in rows):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(epochs, [r.memorization.frac_correct for r in rows], label="correct")
        ax.plot(epochs, [r.memorization.frac_memorized for r in rows], label="memorized")
        ax.plot(epochs, [r.memorization.frac_other for r in rows], label="other")
        ax.set_xlabel("epoch")
        ax.set_ylabel("fraction of flipped samples")
        ax.set_ylim(0, 1)
        ax.legend()
        ax.set_title("Noisy-sample prediction breakdown")
        fig.tight_layout()
        path = os.path.join(out_dir, "memorization.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    return written

"""Figures written next to the CSV outputs of the report commands."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


def plot_loss_curves(metrics_csv, out_path, smooth: int = 10) -> Path:
    """Total loss and its three components against step (log scale)."""
    from .training.pretrain import read_metrics

    m = read_metrics(metrics_csv)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.6))
        for key, label in (("L_total", "total"), ("L_app", "appearance"),
                           ("L_mot", "motion"), ("L_align", "alignment")):
            y = m[key]
            if smooth > 1 and len(y) >= smooth:
                y = np.convolve(y, np.ones(smooth) / smooth, mode="valid")
                x = m["step"][smooth - 1:]
            else:
                x = m["step"]
            if np.all(y > 0):
                ax.plot(x, y, label=label, lw=1.4 if key == "L_total" else 1.0)
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False, ncol=2)
        fig.tight_layout()
        fig.savefig(out_path)
        plt.close(fig)
    return Path(out_path)


def plot_ablation(rows: list[dict], out_path, label_keys: list[str]) -> Path:
    """Bar chart of probe accuracy per ablation cell, with the random-init baseline."""
    labels = [", ".join(f"{k}={r[k]}" for k in label_keys) for r in rows]
    acc = [float(r["val_acc"]) for r in rows]
    base = [float(r["baseline_val_acc"]) for r in rows]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(rows) + 2), 3.6))
        x = np.arange(len(rows))
        ax.bar(x - 0.2, acc, 0.4, label="pre-trained")
        ax.bar(x + 0.2, base, 0.4, label="random init", color="0.7")
        ax.set_xticks(x, labels, rotation=20, ha="right")
        ax.set_ylim(0, 1)
        ax.set_ylabel("linear probe accuracy")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(out_path)
        plt.close(fig)
    return Path(out_path)


def plot_mask(image: np.ndarray, out_path, title: str | None = None) -> Path:
    """Show a rendered mask strip (H x W x 3 uint8)."""
    with plt.rc_context(_STYLE | {"axes.grid": False}):
        h, w = image.shape[:2]
        fig, ax = plt.subplots(figsize=(min(12, 1.5 + w / 40), 1.2 + h / 40))
        ax.imshow(image, interpolation="nearest")
        ax.set_axis_off()
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(out_path)
        plt.close(fig)
    return Path(out_path)

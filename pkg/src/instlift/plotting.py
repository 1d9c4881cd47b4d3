"""Figures written next to the text reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no version string or timestamp, so reruns are byte-identical
_META = {"Software": None}


def label_colors(labels: np.ndarray) -> np.ndarray:
    """RGB image with a fixed color per label id; 0 is black."""
    labels = np.asarray(labels, dtype=np.int64)
    golden = 0.6180339887498949
    hue = (labels * golden) % 1.0
    sat = np.where(labels > 0, 0.65, 0.0)
    val = np.where(labels > 0, 0.95, 0.0)
    return matplotlib.colors.hsv_to_rgb(np.stack([hue, sat, val], axis=-1))


def save_overview(path, rows: dict[str, list[np.ndarray]], frame_ids: list[int]) -> None:
    """Grid of label images: one row per named stage, one column per frame."""
    names = list(rows)
    fig, axes = plt.subplots(len(names), len(frame_ids), figsize=(1.6 * len(frame_ids), 1.7 * len(names)),
                             squeeze=False)
    for r, name in enumerate(names):
        for c, f in enumerate(frame_ids):
            ax = axes[r][c]
            ax.imshow(label_colors(rows[name][f]), interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if c == 0:
                ax.set_ylabel(name, fontsize=8)
            if r == 0:
                ax.set_title(f"frame {f}", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=80, metadata=_META)
    plt.close(fig)


def save_loss_curve(path, ce: list[float], density_loss: list[float] | None = None) -> None:
    fig, ax = plt.subplots(figsize=(5, 3))
    it = np.arange(len(ce))
    ax.semilogy(it, np.maximum(ce, 1e-12), lw=0.8, label="cross-entropy")
    if density_loss is not None and np.any(np.asarray(density_loss) > 0):
        ax.semilogy(it, np.maximum(density_loss, 1e-12), lw=0.8, label="density")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=80, metadata=_META)
    plt.close(fig)

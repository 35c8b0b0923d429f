"""Figures written next to the CSV outputs.

Uses the non-interactive Agg backend; every function writes a file and closes
its figure.
"""

from __future__ import annotations

import math
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

GOLDEN = (math.sqrt(5) - 1.0) / 2.0
STYLE = {
    "font.size": 8,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.0,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
# deterministic PNG bytes across runs
_PNG_META = {"Software": None}


def _fig(width=6.0, rows=1, cols=1, height=None):
    with plt.rc_context(STYLE):
        return plt.subplots(rows, cols, figsize=(width, height or width * GOLDEN), squeeze=False)


def _save(fig, path: str) -> str:
    with plt.rc_context(STYLE):
        fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_loss_curves(rows: Sequence[dict], path: str) -> str:
    """Per-epoch mean of each loss term (generator terms left, totals right)."""
    epochs = sorted({int(r["epoch"]) for r in rows})
    terms = ["adv_A", "adv_B", "cyc_A", "cyc_B", "cs_A", "cs_B"]
    fig, axes = _fig(8.0, 1, 2, height=3.0)
    ax_l, ax_r = axes[0]

    def epoch_mean(key):
        return [np.mean([float(r[key]) for r in rows if int(r["epoch"]) == e]) for e in epochs]

    for t in terms:
        vals = epoch_mean(t)
        if any(v != 0 for v in vals):
            ax_l.plot(epochs, vals, label=t)
    ax_l.set_xlabel("epoch")
    ax_l.set_ylabel("loss")
    ax_l.legend(ncol=2, frameon=False)
    for t in ("total_G", "total_D"):
        ax_r.plot(epochs, epoch_mean(t), label=t)
    ax_r.set_xlabel("epoch")
    ax_r.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def plot_metric_distributions(per_image: Sequence[dict], metrics: Sequence[str], path: str) -> str:
    fig, axes = _fig(2.6 * len(metrics), 1, len(metrics), height=2.4)
    for ax, m in zip(axes[0], metrics):
        vals = np.array([row[m] for row in per_image], dtype=float)
        finite = vals[np.isfinite(vals)]
        if finite.size:
            ax.hist(finite, bins=min(20, max(1, finite.size)), color="#2b8cbe")
            ax.axvline(finite.mean(), color="k", linestyle="--", linewidth=0.8)
        ax.set_title(m.upper())
        ax.set_ylabel("images")
    fig.tight_layout()
    return _save(fig, path)


def compose_grid(rows: Sequence[Sequence[np.ndarray]]) -> np.ndarray:
    """Tile (H, W, 3) uint8 images into one array; all tiles share one size."""
    return np.concatenate([np.concatenate(list(r), axis=1) for r in rows], axis=0)


def save_grid(rows: Sequence[Sequence[np.ndarray]], path: str) -> tuple[int, int]:
    grid = compose_grid(rows)
    Image.fromarray(grid).save(path)
    return len(rows), len(rows[0])


def plot_labeled_grid(rows: Sequence[Sequence[np.ndarray]], column_titles: Sequence[str], path: str) -> str:
    n_rows, n_cols = len(rows), len(rows[0])
    fig, axes = _fig(1.4 * n_cols, n_rows, n_cols, height=1.4 * n_rows + 0.3)
    for i, row in enumerate(rows):
        for j, tile in enumerate(row):
            ax = axes[i][j]
            ax.imshow(tile)
            ax.set_xticks([])
            ax.set_yticks([])
            for s in ax.spines.values():
                s.set_visible(False)
            if i == 0:
                ax.set_title(column_titles[j])
    fig.tight_layout(pad=0.2)
    return _save(fig, path)

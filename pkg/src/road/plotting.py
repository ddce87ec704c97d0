"""Figures written next to the CSV exports."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    # pinned so repeated exports of the same records produce identical files
    "svg.hashsalt": "road",
    "path.simplify": False,
}


def _figsize(scale: float = 1.0, ratio: float = (math.sqrt(5) - 1) / 2) -> tuple[float, float]:
    width = 6.0 * scale
    return width, width * ratio


def _mean_curve(records, attr: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean and standard error per period over the records that reached it."""
    n = max(len(r.rows) for r in records)
    vals = np.full((len(records), n), np.nan)
    for i, rec in enumerate(records):
        for row in rec.rows:
            vals[i, row.period] = getattr(row, attr)
    # carry evaluations forward between evaluation points
    if attr.startswith("eval"):
        for i in range(len(records)):
            last = np.nan
            for j in range(n):
                if np.isnan(vals[i, j]):
                    vals[i, j] = last
                else:
                    last = vals[i, j]
    with np.errstate(invalid="ignore"):
        count = (~np.isnan(vals)).sum(axis=0)
        mean = np.nanmean(np.where(count > 0, vals, 0.0), axis=0)
        std = np.nanstd(np.where(count > 0, vals, 0.0), axis=0)
    se = np.where(count > 1, std / np.sqrt(np.maximum(count, 1)), 0.0)
    return np.arange(n), mean, se


def plot_curves(records: Sequence, path: str | Path) -> Path:
    """Evaluation score and surrogate components per period, one line per strategy."""
    path = Path(path)
    groups: dict[str, list] = {}
    for rec in records:
        groups.setdefault(rec.strategy, []).append(rec)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=_figsize(2.0, 0.3))
        for label, recs in groups.items():
            for ax, attr in zip(axes, ("eval_score", "delta_off", "delta_on")):
                x, mean, se = _mean_curve(recs, attr)
                line, = ax.plot(x, mean, label=label, lw=1.2)
                ax.fill_between(x, mean - se, mean + se, color=line.get_color(), alpha=0.2, lw=0)
        for ax, title in zip(axes, ("normalized return", r"$\Delta_{off}$", r"$\Delta_{on}$")):
            ax.set_xlabel("period")
            ax.set_title(title)
        axes[0].legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path


def plot_heatmap(arms: Sequence[float], counts: Sequence[Sequence[int]], bucket: int, path: str | Path) -> Path:
    """Share of selections per arm in each period bucket."""
    path = Path(path)
    mat = np.asarray(counts, dtype=float).T
    totals = mat.sum(axis=0, keepdims=True)
    share = np.divide(mat, totals, out=np.zeros_like(mat), where=totals > 0)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=_figsize(1.0, 0.45))
        im = ax.imshow(share, aspect="auto", origin="lower", cmap="viridis", vmin=0.0, vmax=1.0,
                       extent=(0, mat.shape[1] * bucket, -0.5, len(arms) - 0.5))
        ax.set_yticks(range(len(arms)))
        ax.set_yticklabels([f"{a:g}" for a in arms])
        ax.set_xlabel("period")
        ax.set_ylabel("mixing ratio")
        fig.colorbar(im, ax=ax, label="selection share")
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path

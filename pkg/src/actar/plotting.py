"""Report figures. Everything renders off-screen to files."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Mapping, Sequence

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
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_class_precision(per_class: Mapping[int, float], class_names: Sequence[str], path,
                         title: str = "Per-class precision") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 2.8))
        keys = sorted(per_class)
        names = [class_names[k] if k < len(class_names) else str(k) for k in keys]
        vals = [100 * per_class[k] for k in keys]
        ax.bar(names, vals, color="0.35")
        ax.axhline(np.mean(vals), color="tab:red", lw=1, ls="--", label=f"mean {np.mean(vals):.2f}%")
        ax.set_ylim(0, 105)
        ax.set_ylabel("precision (%)")
        ax.set_title(title)
        ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)


def plot_ablation(rows: Sequence[Dict], path) -> Path:
    """Horizontal bars, one per ablation row (needs ``name`` and ``mean_precision``)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 0.45 * len(rows) + 1))
        names = [r["name"] for r in rows]
        vals = [100 * r["mean_precision"] for r in rows]
        y = np.arange(len(rows))[::-1]
        ax.barh(y, vals, color="0.4")
        for yi, v in zip(y, vals):
            ax.text(v + 0.5, yi, f"{v:.2f}", va="center", fontsize=8)
        ax.set_yticks(y)
        ax.set_yticklabels(names)
        ax.set_xlim(0, 110)
        ax.set_xlabel("average precision (%)")
        ax.set_title("Component ablation")
        return _save(fig, path)


def plot_k_sweep(rows: Sequence[Dict], path, metric: str = "mean_precision",
                 ylabel: str = "average precision (%)") -> Path:
    """One line per clustering method against the number of clusters."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        for method in sorted({r["method"] for r in rows}):
            pts = sorted((r["k"], r[metric]) for r in rows if r["method"] == method)
            ks, vs = zip(*pts)
            scale = 100 if metric == "mean_precision" else 1
            ax.plot(ks, [scale * v for v in vs], marker="o", ms=3, label=method)
        ax.set_xlabel("number of clusters")
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        return _save(fig, path)

"""Figures for traces and run comparisons (PNG, non-interactive backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 8,
    "figure.dpi": 120,
}


def plot_trace(series: dict[str, tuple], title: str, path: Path) -> Path:
    """One stacked panel per quantity; ``series`` maps label -> (t, values)."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(series), 1, sharex=True,
                                 figsize=(6.0, 1.9 * len(series) + 0.6), squeeze=False)
        for ax, (label, (t, y)) in zip(axes[:, 0], series.items()):
            ax.plot(t, y, lw=1.4)
            ax.set_ylabel(label)
        axes[-1, 0].set_xlabel("time [s]")
        axes[0, 0].set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_comparison(rows: list[tuple[str, int, int]], title: str, path: Path) -> Path:
    """Grouped bars of baseline vs stressed counts."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.2))
        x = range(len(rows))
        w = 0.38
        base = [r[1] for r in rows]
        stressed = [r[2] for r in rows]
        ax.bar([i - w / 2 for i in x], base, w, label="without STM", color="#7f8c8d")
        ax.bar([i + w / 2 for i in x], stressed, w, label="with STM", color="#c0392b")
        for i, (b, s) in enumerate(zip(base, stressed)):
            ax.text(i - w / 2, b, str(b), ha="center", va="bottom", fontsize=7)
            ax.text(i + w / 2, s, str(s), ha="center", va="bottom", fontsize=7)
        ax.set_xticks(list(x), [r[0] for r in rows])
        ax.set_ylabel("count")
        ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path

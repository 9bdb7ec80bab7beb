"""SVG charts rendered from CSV files alone.

Output is byte-stable: the SVG id salt is fixed and no creation date is
embedded, so re-rendering the same CSV gives the same file.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from tsprl.campaign import read_curve_csv  # noqa: E402

_STYLE = {"svg.hashsalt": "tsprl", "svg.fonttype": "path", "font.size": 9}


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def learning_curve_chart(csv_path: str | Path, svg_path: str | Path, window: int = 10) -> None:
    records = read_curve_csv(csv_path)
    x = [r.episode for r in records]
    series = [("avg_step_reward", [r.avg_step_reward for r in records])]
    if any(not math.isnan(r.avg_bus_delay_s) for r in records):
        series.append(("avg_bus_delay_s", [r.avg_bus_delay_s for r in records]))
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(len(series), 1, figsize=(6, 2.6 * len(series)), squeeze=False)
        for ax, (name, y) in zip(axes[:, 0], series):
            ax.plot(x, y, lw=0.8, color="0.6", label=name)
            if len(y) >= window:
                ma = [sum(y[i - window + 1:i + 1]) / window for i in range(window - 1, len(y))]
                ax.plot(x[window - 1:], ma, lw=1.5, color="C0", label=f"{window}-episode mean")
            ax.set_xlabel("episode")
            ax.set_ylabel(name)
            ax.legend(loc="lower right" if name == "avg_step_reward" else "upper right")
        fig.tight_layout()
        _save(fig, svg_path)


def box_chart(groups: dict[str, dict[str, list[float]]], svg_path: str | Path, ylabel: str) -> None:
    """Side-by-side boxes: ``groups[label][movement] -> per-replicate values``."""
    labels = list(groups)
    movements = sorted({m for g in groups.values() for m in g})
    width = 0.8 / max(len(labels), 1)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(1.2 + 1.4 * len(movements), 3.2))
        for k, label in enumerate(labels):
            pos = [i + (k - (len(labels) - 1) / 2) * width for i in range(len(movements))]
            data = [groups[label].get(m, []) or [math.nan] for m in movements]
            bp = ax.boxplot(data, positions=pos, widths=width * 0.9, patch_artist=True,
                            showmeans=True, manage_ticks=False)
            for patch in bp["boxes"]:
                patch.set_facecolor(f"C{k}")
                patch.set_alpha(0.5)
            ax.plot([], [], color=f"C{k}", lw=6, alpha=0.5, label=label)
        ax.set_xticks(range(len(movements)))
        ax.set_xticklabels(movements)
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=7)
        fig.tight_layout()
        _save(fig, svg_path)

"""Figures written next to the delimited reports (Agg backend, no display)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import METRICS, AngularDensity, MetricReport  # noqa: E402

_STYLE = {
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_training_log(history: list[dict], path, eval_N: int = 20) -> None:
    """Loss curves on the left axis, validation recall on the right."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        epochs = [h["epoch"] for h in history]
        ax.plot(epochs, [h["rec"] for h in history], marker="o", ms=3, label="L_rec")
        ax.plot(epochs, [h["cl"] for h in history], marker="s", ms=3, label="L_CL")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss (batch mean)")
        right = ax.twinx()
        right.plot(epochs, [h["val"] for h in history], color="C3", marker="^", ms=3, label=f"val recall@{eval_N}")
        right.set_ylabel(f"recall@{eval_N}")
        right.grid(False)
        lines = ax.get_lines() + right.get_lines()
        ax.legend(lines, [ln.get_label() for ln in lines], loc="best", frameon=False)
        _save(fig, path)


def plot_report(report: MetricReport, path) -> None:
    """Grouped bars: one cluster per metric@N, one bar per user group."""
    with plt.rc_context(_STYLE):
        groups = list(report.values)
        keys = [(m, N) for N in report.Ns for m in METRICS]
        x = np.arange(len(keys))
        width = 0.8 / len(groups)
        fig, ax = plt.subplots(figsize=(1.0 + 0.9 * len(keys), 3.5))
        for i, g in enumerate(groups):
            vals = [report.values[g][k] for k in keys]
            ax.bar(x + (i - (len(groups) - 1) / 2) * width, vals, width, label=f"{g} (n={report.counts[g]})")
        ax.set_xticks(x, [f"{m}@{N}" for m, N in keys], rotation=30, ha="right")
        ax.set_ylim(0, 1)
        ax.legend(frameon=False, fontsize=8)
        _save(fig, path)


def plot_ablation(reports: dict[str, MetricReport], path, metrics=(("recall", 20), ("ndcg", 20))) -> None:
    """Horizontal bars per variant for each requested metric, full model on top."""
    with plt.rc_context(_STYLE):
        names = list(reports)
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 0.4 * len(names) + 1.2), sharey=True)
        axes = np.atleast_1d(axes)
        y = np.arange(len(names))[::-1]
        for ax, (m, N) in zip(axes, metrics):
            vals = [reports[n].get(m, N) for n in names]
            colors = ["C3" if n == "full" else "C0" for n in names]
            ax.barh(y, vals, color=colors)
            ax.set_title(f"{m}@{N}")
            lo = min(vals)
            ax.set_xlim(max(0.0, lo - 0.15 * (max(vals) - lo + 1e-3) - 0.02), max(vals) * 1.02 + 1e-3)
        axes[0].set_yticks(y, names)
        _save(fig, path)


def plot_density(curves: dict[str, AngularDensity], path) -> None:
    """Angular density of the 2-D projected intent embeddings, one polar curve per model."""
    with plt.rc_context(_STYLE):
        fig = plt.figure(figsize=(4.2, 4.2))
        ax = fig.add_subplot(projection="polar")
        for i, (label, d) in enumerate(curves.items()):
            theta = np.append(d.grid, d.grid[0])
            r = np.append(d.density, d.density[0])
            ax.plot(theta, r, color=f"C{i}", label=f"{label} (conc {d.concentration:.3f})")
            ax.fill(theta, r, color=f"C{i}", alpha=0.15)
        ax.legend(loc="upper right", bbox_to_anchor=(1.15, 1.12), frameon=False, fontsize=8)
        _save(fig, path)

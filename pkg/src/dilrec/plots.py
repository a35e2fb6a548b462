"""Metric figures rendered to files next to the delimited exports."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evaluation import MetricsReport  # noqa: E402


def _label(report: MetricsReport) -> str:
    return f"{report.run['strategy']} (seed {report.run['seed']})"


def plot_metric_over_periods(
    reports: Sequence[MetricsReport], metric: str, path: str | os.PathLike
) -> None:
    """Line plot of one metric across evaluated periods, one line per report."""
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    for report in reports:
        xs = [p["index"] for p in report.periods]
        ys = [p[metric] for p in report.periods]
        ax.plot(xs, ys, marker="o", linewidth=1.6, label=_label(report))
    ax.set_xlabel("evaluated period")
    ax.set_ylabel(metric)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_report_figures(reports: Sequence[MetricsReport], out_dir: str | os.PathLike) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric in ("recall", "ndcg"):
        path = out / f"{metric}_over_periods.png"
        plot_metric_over_periods(reports, metric, path)
        paths.append(path)
    return paths

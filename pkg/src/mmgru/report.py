"""Report files: delimited tables plus rendered figures.

Every CLI command that accepts --report-dir lands its numbers here as
CSV and, next to each table, a PNG that plots the same data. Figures
use the Agg backend so this works headless.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def save_loss_curve(losses: list[float], path) -> None:
    """Mean loss per epoch as a line plot."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(range(1, len(losses) + 1), losses, marker="o", markersize=3, linewidth=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean loss")
        ax.set_title("training loss")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def save_metric_bars(names: list[str], values: list[float], path, title: str = "caption metrics") -> None:
    """One bar per corpus metric."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        bars = ax.bar(names, values, color="#4878a8")
        ax.bar_label(bars, fmt="%.3f", padding=2, fontsize=8)
        ax.set_ylabel("score")
        ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def save_rank_histogram(ranks_by_direction: dict[str, list[int]], path) -> None:
    """Histogram of best correct ranks, one panel per retrieval direction."""
    directions = sorted(ranks_by_direction)
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(directions), squeeze=False)
        for ax, direction in zip(axes[0], directions):
            ranks = ranks_by_direction[direction]
            top = max(ranks) if ranks else 1
            ax.hist(ranks, bins=range(1, top + 2), color="#4878a8", edgecolor="white", align="left")
            ax.set_xlabel("best correct rank")
            ax.set_ylabel("queries")
            ax.set_title(direction)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def train_report(report_dir, losses: list[float]) -> list[str]:
    """Write loss.csv and loss.png; returns the paths written."""
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    csv_path = report_dir / "loss.csv"
    png_path = report_dir / "loss.png"
    write_csv(csv_path, ["epoch", "mean_loss"], [[i + 1, loss] for i, loss in enumerate(losses)])
    save_loss_curve(losses, png_path)
    return [str(csv_path), str(png_path)]


def eval_report(report_dir, names: list[str], values: list[float], per_image_rows: list[list]) -> list[str]:
    """Write metrics.csv/per_image.csv and metrics.png for the chosen metrics."""
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    csv_path = report_dir / "metrics.csv"
    per_image_path = report_dir / "per_image.csv"
    png_path = report_dir / "metrics.png"
    write_csv(csv_path, ["metric", "value"], [[n, v] for n, v in zip(names, values)])
    paths = [str(csv_path)]
    if per_image_rows:
        write_csv(per_image_path, ["id", "metric", "value"], per_image_rows)
        paths.append(str(per_image_path))
    save_metric_bars(names, values, png_path)
    paths.append(str(png_path))
    return paths


def retrieval_report(report_dir, results_by_direction: dict, summary_rows: list[list]) -> list[str]:
    """Write retrieval.csv and ranks.png for bidirectional rank results."""
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    csv_path = report_dir / "retrieval.csv"
    png_path = report_dir / "ranks.png"
    write_csv(csv_path, ["direction", "metric", "value"], summary_rows)
    ranks = {
        direction: [r.correct_ranks[0] for r in results if r.correct_ranks]
        for direction, results in results_by_direction.items()
    }
    save_rank_histogram(ranks, png_path)
    return [str(csv_path), str(png_path)]

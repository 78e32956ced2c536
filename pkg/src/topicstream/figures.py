"""Figure rendering for the report paths.

Figures are a convenience companion to the delimited outputs; the CSV files
remain the primary artifacts and the only ones covered by byte-level
determinism guarantees.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import QuartileRow, RunHistory, SimilarityMatrix


def save_similarity_heatmap(matrix: SimilarityMatrix, path: str | Path) -> None:
    """Heatmap of the pairwise overlap scores (x100 for readability)."""
    n = len(matrix.task_ids)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.45 * n), max(3.5, 0.4 * n)))
    im = ax.imshow(matrix.values * 100.0, cmap="viridis")
    ax.set_xticks(range(n), matrix.task_ids, rotation=90, fontsize=7)
    ax.set_yticks(range(n), matrix.task_ids, fontsize=7)
    ax.set_xlabel("second pool from task")
    ax.set_ylabel("first pool from task")
    fig.colorbar(im, ax=ax, label="overlap score x 100")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_history_curves(history: RunHistory, path: str | Path, metric: str = "mrr10") -> None:
    """One line per tracked target across training steps."""
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = list(range(history.n_steps + 1))
    for label in history.tracked:
        ax.plot(steps, history.scores(label, metric), marker="o", markersize=3, label=label)
    ax.set_xlabel("training step")
    ax.set_ylabel(metric)
    ax.set_ylim(bottom=0)
    ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_quartile_bars(rows: list[QuartileRow], path: str | Path) -> None:
    """Grouped bars of mean forgetting per similarity quartile."""
    tracked = sorted({r.tracked_task for r in rows})
    quartiles = [1, 2, 3, 4]
    width = 0.8 / max(1, len(tracked))
    fig, ax = plt.subplots(figsize=(7, 4))
    for k, task in enumerate(tracked):
        vals = []
        for q in quartiles:
            match = [r.mean_mf for r in rows if r.tracked_task == task and r.quartile == q]
            vals.append(match[0] if match else np.nan)
        offsets = [q - 0.4 + width * (k + 0.5) for q in quartiles]
        ax.bar(offsets, vals, width=width, label=task)
    ax.set_xticks(quartiles, [f"Q{q}" for q in quartiles])
    ax.set_xlabel("similarity quartile")
    ax.set_ylabel("mean forgetting")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)

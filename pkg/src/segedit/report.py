"""Figure rendering for the CLI report paths.

Every batch entry point that writes delimited/JSON output also renders a
matplotlib figure next to it: training curves beside the CSV log, a metric
summary beside the eval report, a contact sheet beside a synthesized
dataset.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .dataset import SynthSample
from .training import HISTORY_FIELDS, TrainingLosses

__all__ = ["render_training_curves", "render_eval_figure", "render_dataset_sheet"]


def render_training_curves(history: Sequence[TrainingLosses], path: str | Path) -> None:
    fig, (ax_total, ax_parts) = plt.subplots(1, 2, figsize=(10, 4))
    epochs = [h.epoch for h in history]
    ax_total.plot(epochs, [h.l_g for h in history], label="generator", color="#2c5f8a")
    ax_total.plot(epochs, [h.l_d for h in history], label="discriminator", color="#8a442c")
    ax_total.set_xlabel("epoch")
    ax_total.set_ylabel("objective")
    ax_total.set_title("totals")
    ax_total.legend()
    for name in HISTORY_FIELDS[1:6]:
        ax_parts.plot(epochs, [getattr(h, name) for h in history], label=name)
    ax_parts.set_xlabel("epoch")
    ax_parts.set_title("generator components")
    ax_parts.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_eval_figure(report: dict, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    names = ["is", "fid"]
    values = [report.get(n, float("nan")) for n in names]
    bars = ax.bar(names, values, color=["#2c5f8a", "#8a442c"])
    for bar, val in zip(bars, values):
        ax.annotate(
            f"{val:.3f}",
            (bar.get_x() + bar.get_width() / 2, bar.get_height()),
            ha="center",
            va="bottom",
        )
    ax.set_title(f"n={report.get('n')} seed={report.get('seed')} backend={report.get('backend')}")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_dataset_sheet(samples: Sequence[SynthSample], path: str | Path, cols: int = 4) -> None:
    count = min(len(samples), 16)
    rows = int(np.ceil(count / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.4 * rows))
    axes = np.atleast_1d(axes).ravel()
    for ax in axes:
        ax.axis("off")
    for ax, sample in zip(axes, samples[:count]):
        ax.imshow(sample.image.data)
        ax.set_title(sample.caption, fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)

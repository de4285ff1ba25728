"""Matplotlib figure rendering for the CLI report paths.

Figures are written next to the delimited outputs they illustrate: the
training-history curve beside history.csv, and the aligned-prediction
scatter (linearity diagnostic) beside the metrics JSON.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import AffineMap, DepthMap
from .training import HistoryRow


def save_history_figure(history: Sequence[HistoryRow], path) -> None:
    """Train loss and validation aligned Abs-Rel over iterations."""
    iters = [r.iteration for r in history]
    fig, ax_loss = plt.subplots(figsize=(6.0, 3.6))
    ax_loss.plot(iters, [r.train_loss for r in history],
                 color="tab:blue", label="train loss")
    ax_loss.set_xlabel("iteration")
    ax_loss.set_ylabel("train loss", color="tab:blue")
    ax_val = ax_loss.twinx()
    ax_val.plot(iters, [r.val_abs_rel for r in history],
                color="tab:red", label="val abs-rel (aligned)")
    ax_val.set_ylabel("validation abs-rel", color="tab:red")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_validation_comparison(histories: dict, path) -> None:
    """Validation curves of several runs (e.g. curriculum modes) overlaid."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for label, history in histories.items():
        ax.plot([r.iteration for r in history],
                [r.val_abs_rel for r in history], label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("validation abs-rel (aligned)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_linearity_figure(pred: DepthMap, gt: DepthMap, alignment: AffineMap,
                          path, max_points: int = 15000, seed: int = 0) -> None:
    """Scatter of aligned predicted depth against ground truth with the
    ideal identity line; a roughly linear band means the prediction matches
    the scene up to the fitted scale and shift."""
    m = pred.joint_mask(gt)
    x = gt.values[m]
    y = alignment(pred.values[m])
    if x.size > max_points:
        sel = np.random.default_rng(seed).choice(x.size, max_points,
                                                 replace=False)
        x, y = x[sel], y[sel]
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    ax.scatter(x, y, s=2, alpha=0.35, color="tab:blue", linewidths=0)
    lo = float(min(x.min(), y.min()))
    hi = float(max(x.max(), y.max()))
    ax.plot([lo, hi], [lo, hi], color="tab:red", linewidth=1.2,
            label="ideal linear relation")
    ax.set_xlabel("ground-truth depth")
    ax.set_ylabel("aligned predicted depth")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

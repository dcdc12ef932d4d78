"""Static figures: anomaly score against time, and training loss curves."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import binary_to_events  # noqa: E402


def plot_scores(path, scores, threshold: Optional[float] = None, labels=None, values=None,
                title: str = "") -> Path:
    """Score-vs-time PNG with the decision threshold and shaded ground-truth events.

    When ``values`` is given, the raw series is drawn in a panel above the scores.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scores = np.asarray(scores, dtype=np.float64)
    t = np.arange(scores.size)
    events = binary_to_events(labels) if labels is not None else []
    n_rows = 2 if values is not None else 1
    fig, axes = plt.subplots(n_rows, 1, figsize=(12, 2.6 * n_rows), sharex=True, squeeze=False)
    axes = axes[:, 0]
    if values is not None:
        axes[0].plot(t, np.asarray(values), lw=0.6, color="0.2")
        axes[0].set_ylabel("value")
    ax = axes[-1]
    ax.plot(t, scores, lw=0.6, color="tab:blue", label="score")
    if threshold is not None:
        ax.axhline(threshold, color="tab:red", lw=1.0, ls="--", label="threshold")
    for a in axes:
        for s, e in events:
            a.axvspan(s, e, color="tab:orange", alpha=0.25, lw=0)
    ax.set_yscale("symlog", linthresh=max(float(np.median(scores)), 1e-12))
    ax.set_xlabel("t")
    ax.set_ylabel("score")
    ax.legend(loc="upper right", fontsize=8)
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_losses(path, history: Sequence[dict], title: str = "") -> Path:
    """Epoch-mean normal and abnormal reconstruction losses."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(epochs, [h["loss_norm"] for h in history], marker="o", label="loss_norm")
    ax.plot(epochs, [h["loss_abnorm"] for h in history], marker="s", label="loss_abnorm")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path

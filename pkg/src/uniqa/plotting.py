"""Report figures written next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

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
    "savefig.dpi": 120,
}
# no timestamps in the files
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def loss_curve(history, path, title: str = "contrastive loss") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        steps = [h.step for h in history]
        ax.plot(steps, [h.l_image for h in history], lw=0.8, alpha=0.7, label="image to text")
        ax.plot(steps, [h.l_text for h in history], lw=0.8, alpha=0.7, label="text to image")
        ax.plot(steps, [h.loss for h in history], lw=1.4, color="k", label="mean")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def prediction_scatter(pred: Sequence[float], mos: Sequence[float], path, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.5, 3.2))
        ax.scatter(mos, pred, s=10, alpha=0.7, edgecolors="none")
        ax.set_xlabel("MOS")
        ax.set_ylabel("predicted score")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def repeat_bars(report, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        idx = np.arange(len(report.repeats))
        ax.bar(idx - 0.2, [r.srcc for r in report.repeats], width=0.4, label="SRCC")
        ax.bar(idx + 0.2, [r.plcc for r in report.repeats], width=0.4, label="PLCC")
        ax.axhline(report.median_srcc, color="C0", ls="--", lw=0.8)
        ax.axhline(report.median_plcc, color="C1", ls=":", lw=0.8)
        ax.set_xticks(idx, [str(i + 1) for i in idx])
        ax.set_xlabel("repeat")
        ax.set_ylim(min(0.0, min(r.srcc for r in report.repeats)), 1.0)
        ax.set_title(report.mode)
        ax.legend(frameon=False, loc="lower right")
        return _save(fig, path)


def retrieval_strip(images, sims: Sequence[float], path, query: str) -> Path:
    """Top-k retrieved images in a row, similarity under each."""
    k = len(images)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, k, figsize=(1.1 * k, 1.5), squeeze=False)
        for ax, im, s in zip(axes[0], images, sims):
            ax.imshow(np.clip(im.pixels, 0, 1), interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            ax.set_xlabel(f"{s:.2f}", fontsize=7)
        fig.suptitle(repr(query), fontsize=9)
        return _save(fig, path)

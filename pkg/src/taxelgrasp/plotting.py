"""PNG figures for reports and sweeps.

Figures are drawn on standalone Agg figures (no pyplot state) and saved
without a software/date stamp, so the same data gives the same bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

from .dataset import OBJECT_NAMES

_ARCH_ORDER = ("cnn2d1", "cnn2d2", "cnn3d1", "cnn3d2", "lstm1")
_ARCH_LABELS = {
    "cnn2d1": "2D-CNN-1L",
    "cnn2d2": "2D-CNN-2L",
    "cnn3d1": "3D-CNN-1L",
    "cnn3d2": "3D-CNN-2L",
    "lstm1": "LSTM",
}
_PNG_META = {"Software": None}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)
    return path


def confusion_figure(cm, path, title: str = "") -> Path:
    """Row-normalised confusion matrix with raw counts in the cells."""
    cm = np.asarray(cm)
    totals = cm.sum(axis=1, keepdims=True)
    frac = np.divide(cm, totals, out=np.zeros(cm.shape), where=totals > 0)
    fig = Figure(figsize=(7, 6))
    ax = fig.add_subplot()
    ax.imshow(frac, cmap="Blues", vmin=0.0, vmax=1.0)
    names = [n.replace("_", " ") for n in OBJECT_NAMES[: cm.shape[0]]]
    ax.set_xticks(range(cm.shape[1]), names, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(cm.shape[0]), names, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            if cm[i, j]:
                ax.text(j, i, str(int(cm[i, j])), ha="center", va="center", fontsize=7,
                        color="white" if frac[i, j] > 0.5 else "black")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def history_figure(history, path) -> Path:
    """Training loss and validation accuracy per epoch."""
    epochs = [h[0] for h in history]
    fig = Figure(figsize=(7, 4))
    ax = fig.add_subplot()
    ax.plot(epochs, [h[1] for h in history], color="tab:red", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [100 * h[2] for h in history], color="tab:blue", label="val acc")
    ax2.set_ylabel("validation accuracy (%)")
    ax2.set_ylim(0, 100)
    fig.tight_layout()
    return _save(fig, path)


def accuracy_curves_figure(rows, sensor: str, path) -> Path:
    """Validation accuracy against time-series length, one line per architecture."""
    fig = Figure(figsize=(7, 4.5))
    ax = fig.add_subplot()
    for arch in _ARCH_ORDER:
        pts = sorted(
            (r["series_length"], 100 * r["val_acc"])
            for r in rows
            if r["sensor"] == sensor and r["arch"] == arch and r["status"] == "ok"
        )
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", label=_ARCH_LABELS[arch])
    ax.set_xlabel("time-series length")
    ax.set_ylabel("validation accuracy (%)")
    ax.set_title(sensor)
    ax.grid(alpha=0.3)
    if ax.lines:
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def max_accuracy_figure(summary, path) -> Path:
    """Grouped bars of maximum validation accuracy per architecture and sensor."""
    sensors = sorted({s["sensor"] for s in summary})
    archs = [a for a in _ARCH_ORDER if any(s["arch"] == a for s in summary)]
    lookup = {(s["sensor"], s["arch"]): 100 * s["max_val_acc"] for s in summary}
    fig = Figure(figsize=(7, 4.5))
    ax = fig.add_subplot()
    width = 0.8 / max(len(sensors), 1)
    x = np.arange(len(archs))
    for i, sensor in enumerate(sensors):
        ax.bar(x + i * width, [lookup.get((sensor, a), 0.0) for a in archs], width, label=sensor)
    ax.set_xticks(x + width * (len(sensors) - 1) / 2, [_ARCH_LABELS[a] for a in archs])
    ax.set_ylabel("max validation accuracy (%)")
    ax.set_ylim(0, 100)
    if sensors:
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)

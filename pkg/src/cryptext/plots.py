"""Figures for comparison reports.  Everything renders off-screen to PNG."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

ARM_COLORS = {"plain": "#3b6ea8", "encrypted": "#d0773c"}

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "svg.hashsalt": "cryptext",
}


def new_figure(width=6.4, height=None, **kw):
    if height is None:
        height = width * (np.sqrt(5) - 1) / 2
    with plt.rc_context(STYLE):
        return plt.subplots(figsize=(width, height), **kw)


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        fig.tight_layout()
        # fixed metadata keeps re-renders byte-identical
        fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def per_class_f1(plain, encrypted, path, title=""):
    """Grouped bars of per-class F1 for the two arms."""
    names = plain.label_names
    x = np.arange(len(names))
    w = 0.4
    fig, ax = new_figure(max(6.4, 0.45 * len(names) + 2), 3.6)
    ax.bar(x - w / 2, [c.f1 for c in plain.per_class], w, label="plain", color=ARM_COLORS["plain"])
    ax.bar(x + w / 2, [c.f1 for c in encrypted.per_class], w, label="encrypted",
           color=ARM_COLORS["encrypted"])
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=60, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("F1")
    ax.set_title(title)
    ax.legend(frameon=False)
    return save(fig, path)


def headline(reports, path):
    """``reports`` maps classifier -> (plain, encrypted) MetricsReports."""
    metrics = [("accuracy", lambda r: r.accuracy),
               ("macro F1", lambda r: r.macro_avg["f1"]),
               ("weighted F1", lambda r: r.weighted_avg["f1"])]
    fig, axes = new_figure(3.0 * len(reports) + 0.5, 3.2, ncols=len(reports), squeeze=False)
    for ax, (clf, (plain, enc)) in zip(axes[0], reports.items()):
        x = np.arange(len(metrics))
        ax.bar(x - 0.2, [f(plain) for _, f in metrics], 0.4, label="plain", color=ARM_COLORS["plain"])
        ax.bar(x + 0.2, [f(enc) for _, f in metrics], 0.4, label="encrypted",
               color=ARM_COLORS["encrypted"])
        ax.set_xticks(x)
        ax.set_xticklabels([m for m, _ in metrics])
        ax.set_ylim(0, 1)
        ax.set_title(clf)
    axes[0][0].legend(frameon=False, loc="upper right")
    return save(fig, path)


def lstm_history(histories, path):
    """``histories`` maps arm -> list of per-epoch dicts."""
    fig, (ax_loss, ax_acc) = new_figure(8.0, 3.2, ncols=2)
    for arm, hist in histories.items():
        epochs = [h["epoch"] for h in hist]
        color = ARM_COLORS.get(arm)
        ls = "-" if arm == "plain" else (0, (4, 3))
        ax_loss.plot(epochs, [h["loss"] for h in hist], color=color, ls=ls, label=f"{arm} train")
        ax_loss.plot(epochs, [h["val_loss"] for h in hist], color=color, ls=ls, alpha=0.5, label=f"{arm} val")
        ax_acc.plot(epochs, [h["accuracy"] for h in hist], color=color, ls=ls, label=f"{arm} train")
        ax_acc.plot(epochs, [h["val_accuracy"] for h in hist], color=color, ls=ls, alpha=0.5, label=f"{arm} val")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("cross-entropy")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.legend(frameon=False)
    return save(fig, path)


def boosting_curve(histories, path):
    """Training mlogloss per boosting round for each arm."""
    fig, ax = new_figure(5.0, 3.2)
    for arm, hist in histories.items():
        ls = "-" if arm == "plain" else (0, (4, 3))
        ax.plot(np.arange(1, len(hist) + 1), hist, color=ARM_COLORS.get(arm), ls=ls, label=arm)
    ax.set_xlabel("round")
    ax.set_ylabel("train mlogloss")
    ax.legend(frameon=False)
    return save(fig, path)

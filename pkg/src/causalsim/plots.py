"""Figures for ``compare`` output. Uses the non-interactive Agg backend."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _bar(ax, labels, values, ylabel, title):
    ax.bar(range(len(values)), values, color="0.4", width=0.6)
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    ax.set_title(title, fontsize=10)
    for side in ("top", "right"):
        ax.spines[side].set_visible(False)


def tradeoff_figure(summary: list[dict], path) -> Path:
    """Mean ROT rounds next to server-to-server messages per write, one bar per protocol."""
    labels = [r["protocol"] for r in summary]
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3.2))
    _bar(a, labels, [r["mean_rot_rounds"] for r in summary], "rounds", "mean ROT rounds")
    a.axhline(1.0, color="k", lw=0.6, ls=":")
    _bar(b, labels, [r["ss_per_write"] for r in summary], "messages", "server-server msgs per write")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def lag_figure(lags: dict[str, list], path) -> Path:
    """Histogram of visibility lag (ticks from write ack to visible) per protocol."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    top = max((max(v) for v in lags.values() if v), default=1)
    bins = range(0, int(top) + 2)
    for name, vals in lags.items():
        if vals:
            ax.hist(vals, bins=bins, histtype="step", label=name)
    ax.set_xlabel("ticks")
    ax.set_ylabel("writes")
    ax.set_title("visibility lag", fontsize=10)
    if any(lags.values()):
        ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

"""Static figures for the report (matplotlib with the Agg backend)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> str:
    tmp = f"{path}.tmp.png"
    fig.savefig(tmp, dpi=110, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    os.replace(tmp, path)
    return str(path)


def times_vs_eps(path, series: dict, title: str, theory: dict | None = None) -> str:
    """``series`` maps a label to ``(x, y)`` with ``x = log2(1/eps)``."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for label, (x, y) in series.items():
        ax.plot(x, y, "o-", label=label)
    for label, (x, y) in (theory or {}).items():
        ax.plot(x, y, "--", label=label)
    ax.set_xlabel("log2(1/eps)")
    ax.set_ylabel("steps")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def decay_curves(path, curves: dict, title: str) -> str:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for label, (n, y) in curves.items():
        ax.plot(n, y, "o-", label=label)
    ax.set_xlabel("n")
    ax.set_ylabel("log of norm")
    ax.set_yscale("symlog")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def tv_traces(path, traces: dict, title: str) -> str:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for label, y in traces.items():
        ax.plot(range(len(y)), y, "o-", ms=3, label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("total variation to uniform")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)

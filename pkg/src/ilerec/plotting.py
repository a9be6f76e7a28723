"""Figures written next to the CSV outputs: group-loss curves, the
accuracy/fairness trade-off of a sweep and per-phase runtimes."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

GROUP_STYLE = {"L_H": ("Head", "tab:red"), "L_M": ("Mid", "tab:orange"), "L_T": ("Tail", "tab:blue")}
FAIRNESS = (("upd", "UPD (lower is fairer)"), ("ad", "AD"), ("ee", "EE"))


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_group_losses(trace, path, title: str | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    epochs = trace.column("epoch")
    for key, (label, color) in GROUP_STYLE.items():
        ax.plot(epochs, trace.column(key), label=label, color=color, lw=1.4)
    ax.plot(epochs, trace.column("L"), label="All", color="black", lw=1.0, ls="--")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    if title:
        ax.set_title(title, fontsize=9)
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_tradeoff(rows, path) -> Path:
    """nDCG against each fairness metric, one line per method over lambda."""
    fig, axes = plt.subplots(1, len(FAIRNESS), figsize=(11.0, 3.2))
    methods = sorted({r["method"] for r in rows})
    for ax, (key, label) in zip(axes, FAIRNESS):
        for method in methods:
            pts = [r for r in rows if r["method"] == method and r["status"] == "ok"]
            pts.sort(key=lambda r: r["lambda"])
            ax.plot([r[key] for r in pts], [r["ndcg"] for r in pts], marker="o", ms=3, label=method)
        ax.set_xlabel(label)
        ax.set_ylabel("nDCG")
    axes[0].legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_runtimes(timings: dict, path) -> Path:
    """Stacked per-phase wall-clock bars, one bar per run."""
    names = list(timings)
    phases = []
    for t in timings.values():
        phases.extend(p for p in t if p not in phases and p != "total")
    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(names)), 3.4))
    bottom = [0.0] * len(names)
    for phase in phases:
        vals = [timings[n].get(phase, 0.0) / 1000.0 for n in names]
        ax.bar(range(len(names)), vals, bottom=bottom, label=phase)
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels([n.split("_")[0] for n in names], rotation=30, ha="right")
    ax.set_ylabel("seconds")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)

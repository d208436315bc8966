"""Figures written next to the CSV/JSON reports (PNG, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from feded.metrics import RoundReport  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def accuracy_curves(runs: dict[str, dict[int, list[RoundReport]]], path) -> Path:
    """Mean global test accuracy per round, one line per label, with a min-max band over seeds."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for label, by_seed in runs.items():
            acc = np.array([[r.global_accuracy for r in reps] for reps in by_seed.values()])
            rounds = [r.round for r in next(iter(by_seed.values()))]
            ax.plot(rounds, acc.mean(axis=0), label=label)
            if acc.shape[0] > 1:
                ax.fill_between(rounds, acc.min(axis=0), acc.max(axis=0), alpha=0.2)
        ax.set_xlabel("communication round")
        ax.set_ylabel("test accuracy")
        ax.set_ylim(0, 1)
        ax.legend(frameon=False)
        return _save(fig, path)


def classwise_bars(named: dict[str, list[float]], path, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        n = len(named)
        width = 0.8 / max(n, 1)
        for k, (label, acc) in enumerate(named.items()):
            x = np.arange(len(acc)) + (k - (n - 1) / 2) * width
            ax.bar(x, acc, width=width, label=label)
        ax.set_xticks(np.arange(len(next(iter(named.values())))))
        ax.set_xlabel("class")
        ax.set_ylabel("accuracy")
        ax.set_ylim(0, 1)
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def partition_heatmap(count_matrix, path, title: str = "") -> Path:
    counts = np.asarray(count_matrix)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(0.45 * counts.shape[1] + 1.5, 0.35 * counts.shape[0] + 1))
        im = ax.imshow(counts, cmap="Blues", aspect="auto")
        ax.set_xlabel("class")
        ax.set_ylabel("client")
        ax.set_xticks(range(counts.shape[1]))
        ax.set_yticks(range(counts.shape[0]))
        if counts.size <= 400:
            for (i, j), v in np.ndenumerate(counts):
                ax.text(j, i, str(v), ha="center", va="center", fontsize=6,
                        color="white" if v > counts.max() / 2 else "black")
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax)
        return _save(fig, path)


def summary_bars(summary: dict[str, dict], path) -> Path:
    labels = list(summary)
    means = [summary[k]["mean"] for k in labels]
    stds = [summary[k]["std"] for k in labels]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3, 0.9 * len(labels) + 1), 3))
        ax.bar(range(len(labels)), means, yerr=stds, capsize=3)
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_ylabel("final test accuracy")
        ax.set_ylim(0, 1)
        return _save(fig, path)

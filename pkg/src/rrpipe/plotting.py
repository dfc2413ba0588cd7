"""Report figures rendered to files with matplotlib's Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _figure(width=6.4, height=None):
    height = height or width * (np.sqrt(5) - 1) / 2
    return plt.subplots(figsize=(width, height))


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # Fixed metadata keeps reruns byte-identical.
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_dataset_scores(reports: Mapping, path) -> Path:
    """Grouped bars of nDCG per dataset (plus the macro average) per system."""
    with plt.rc_context(STYLE):
        datasets = sorted({d for r in reports.values() for d in r.per_dataset}) + ["Avg."]
        x = np.arange(len(datasets))
        width = 0.8 / max(1, len(reports))
        fig, ax = _figure()
        for i, (name, rep) in enumerate(reports.items()):
            vals = [rep.per_dataset.get(d, 0.0) for d in datasets[:-1]] + [rep.macro]
            ax.bar(x + (i - (len(reports) - 1) / 2) * width, vals, width, label=name)
        ax.set_xticks(x)
        ax.set_xticklabels(datasets, rotation=30, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel(f"nDCG@{next(iter(reports.values())).k}")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_per_query(reports: Mapping, path) -> Path:
    """Per-query nDCG, queries sorted by the last system's score."""
    with plt.rc_context(STYLE):
        names = list(reports)
        last = reports[names[-1]]
        qids = sorted(last.per_query, key=lambda q: (-last.per_query[q], q))
        fig, ax = _figure()
        for name in names:
            ax.plot(range(len(qids)), [reports[name].per_query.get(q, 0.0) for q in qids],
                    marker="o", markersize=3, linewidth=1, label=name)
        ax.set_xlabel("query (sorted)")
        ax.set_ylabel(f"nDCG@{last.k}")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_loss_trace(trace: Sequence[float], path, title: str = "InfoNCE training loss") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        ax.plot(np.arange(len(trace)), trace, linewidth=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean loss")
        ax.set_title(title)
        return _save(fig, path)

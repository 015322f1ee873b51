"""Report figures rendered to files next to the delimited outputs.

Everything draws with the Agg backend and saves to whatever format the
path's suffix implies (SVG by default in the CLI).  Figures display results
only; no computation happens here.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .index import IndexSeries  # noqa: E402


def _month_axis(ax, months):
    step = max(1, len(months) // 8)
    ticks = range(0, len(months), step)
    ax.set_xticks(list(ticks))
    ax.set_xticklabels([months[i] for i in ticks], rotation=45, ha="right")


def plot_index_series(series: IndexSeries, path, title="Monthly index"):
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.plot(range(len(series)), series.values, lw=1.2, color="tab:blue")
    ax.axhline(100.0, color="gray", lw=0.6, ls="--")
    ax.set_ylabel("index (mean 100, unit sd)")
    ax.set_title(title)
    _month_axis(ax, series.months)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_loss_trace(trace, path):
    epochs = [row.epoch for row in trace]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [row.train_loss for row in trace], label="train", lw=1.2)
    heldout = [(row.epoch, row.heldout_loss) for row in trace
               if row.heldout_loss is not None]
    if heldout:
        ax.plot([e for e, _ in heldout], [h for _, h in heldout],
                label="heldout", lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss per document")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_evaluation(index: IndexSeries, reference: IndexSeries,
                    cumdiff: IndexSeries, path):
    """Two panels: the aligned series overlay and the cumulative difference."""
    common = [m for m in index.months if m in set(reference.months)]
    lookup_i = dict(zip(index.months, index.values))
    lookup_r = dict(zip(reference.months, reference.values))
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(9, 7), sharex=True)
    xs = range(len(common))
    top.plot(xs, [lookup_i[m] for m in common], label="index", lw=1.2)
    top.plot(xs, [lookup_r[m] for m in common], label="reference", lw=1.2)
    top.set_ylabel("value")
    top.legend()
    top.set_title("Index vs reference")
    bottom.plot(range(len(cumdiff)), cumdiff.values, color="tab:red", lw=1.2)
    bottom.set_ylabel("cumulative |difference|")
    _month_axis(bottom, cumdiff.months)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)

# plots.py
# PNG figures for sweeps, the long-tail profile, low-resource curves and training loss

import io

import matplotlib
matplotlib.use("Agg")  # headless

import matplotlib.pyplot as plt
import numpy as np

from kge.artifacts import atomic_write_bytes


def _save(fig, path):
    buf = io.BytesIO()
    fig.tight_layout()
    fig.savefig(buf, format="png", dpi=120, metadata={"Software": None})
    plt.close(fig)
    return atomic_write_bytes(path, buf.getvalue())


def _mrr(cell):
    return cell["all"]["mrr"] if cell["all"] else np.nan


def plot_sweep(cells, path_by_k, path_by_lambda):
    """MRR versus k (one line per lambda) and MRR versus lambda (one line per k)."""
    lambdas = sorted({c["lambda"] for c in cells})
    ks = sorted({c["k"] for c in cells})
    grid = {(c["lambda"], c["k"]): _mrr(c) for c in cells}

    fig, ax = plt.subplots(figsize=(7, 4))
    for lam in lambdas:
        ax.plot(ks, [grid.get((lam, k), np.nan) for k in ks], marker="o", label=f"λ={lam:g}")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("neighbours k")
    ax.set_ylabel("MRR")
    ax.set_title("Effect of the number of neighbours")
    ax.legend(fontsize="small", ncol=2)
    _save(fig, path_by_k)

    fig, ax = plt.subplots(figsize=(7, 4))
    for k in ks:
        ax.plot(lambdas, [grid.get((lam, k), np.nan) for lam in lambdas], marker="o", label=f"k={k}")
    ax.set_xlabel("interpolation λ")
    ax.set_ylabel("MRR")
    ax.set_title("Effect of the interpolation weight")
    ax.legend(fontsize="small", ncol=2)
    _save(fig, path_by_lambda)


def plot_frequency_histogram(table, path):
    counts = np.asarray(table.counts)
    fig, ax = plt.subplots(figsize=(7, 4))
    bins = np.arange(0, max(int(counts.max(initial=0)), 1) + 2) - 0.5
    ax.hist(counts, bins=bins, color="tab:blue")
    for b in table.boundaries[1:]:
        ax.axvline(b - 0.5, color="tab:red", linestyle="--", linewidth=1)
    ax.set_xlabel("train occurrences per entity")
    ax.set_ylabel("entities")
    ax.set_title("Long-tail profile")
    _save(fig, path)


def plot_bucket_bars(rows, path):
    """Per-bucket MRR with and without the knowledge store."""
    labels = [r["bucket"] for r in rows]
    with_store = [r["with_store"]["mrr"] if r["with_store"] else 0.0 for r in rows]
    without = [r["without_store"]["mrr"] if r["without_store"] else 0.0 for r in rows]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(x - 0.2, without, width=0.4, label="without store")
    ax.bar(x + 0.2, with_store, width=0.4, label="with store")
    ax.set_xticks(x, labels)
    ax.set_xlabel("train frequency of the gold entity")
    ax.set_ylabel("MRR")
    ax.legend()
    _save(fig, path)


def plot_subsample(rows, path):
    fractions = [r["fraction"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(fractions, [r["with_store"]["all"]["mrr"] for r in rows], marker="o", label="with store")
    ax.plot(fractions, [r["without_store"]["all"]["mrr"] for r in rows], marker="s", label="without store")
    ax.set_xlabel("fraction of training triples")
    ax.set_ylabel("MRR")
    ax.set_title("Varying the size of the training set")
    ax.legend()
    _save(fig, path)


def plot_training_log(log, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    for stage in sorted({row["stage"] for row in log}):
        rows = [r for r in log if r["stage"] == stage]
        ax.plot([r["epoch"] for r in rows], [r["loss"] for r in rows], marker=".", label=stage)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    _save(fig, path)

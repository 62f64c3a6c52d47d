"""Matplotlib figure rendering for report outputs.

Every report-producing command writes a figure next to its delimited
output: error histograms for evaluation, MAE curves for training and
replay, correlation bars for the feature report, and map slices for
signal maps. All figures use the Agg backend and fixed sizes so files
are reproducible.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120


def save_error_histogram(result, path: str, title: str = "prediction error"):
    """Probability density of prediction errors from an EvalResult."""
    fig, ax = plt.subplots(figsize=(6, 4))
    centers = 0.5 * (result.bin_edges[:-1] + result.bin_edges[1:])
    total = max(int(result.counts.sum()), 1)
    ax.bar(centers, result.counts / total, width=1.0, color="#4878d0")
    ax.set_xlabel("error (dB)")
    ax.set_ylabel("probability")
    ax.set_title(f"{title} (MAE {result.mae:.2f} dB, n={result.n})")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_training_curve(report, path: str):
    """Train/holdout MAE per epoch from a TrainReport."""
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [row[0] for row in report.epochs]
    ax.plot(epochs, [row[1] for row in report.epochs], label="train")
    ax.plot(epochs, [row[2] for row in report.epochs], label="holdout")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MAE (dB)")
    ax.set_title(f"offline training, variant {report.variant}")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_replay_curve(rows, path: str):
    """Per-window online vs frozen MAE from replay WindowRows."""
    fig, ax = plt.subplots(figsize=(7, 4))
    idx = [r.index for r in rows if r.n_samples]
    ax.plot(idx, [r.mae_online for r in rows if r.n_samples],
            marker="o", label="online")
    ax.plot(idx, [r.mae_frozen for r in rows if r.n_samples],
            marker="s", linestyle="--", label="frozen offline")
    ax.set_xlabel("window")
    ax.set_ylabel("MAE (dB)")
    ax.set_title("online adaptation")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_correlation_bars(entries, path: str):
    """Feature-vs-RSS Pearson correlations as a horizontal bar chart."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    names = [e.feature for e in entries]
    values = [e.r for e in entries]
    colors = ["#d65f5f" if v < 0 else "#4878d0" for v in values]
    ax.barh(np.arange(len(names)), values, color=colors)
    ax.set_yticks(np.arange(len(names)))
    ax.set_yticklabels(names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("Pearson r vs RSS")
    ax.axvline(0.0, color="k", linewidth=0.8)
    ax.grid(alpha=0.3, axis="x")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_map_slices(smap, path_base: str):
    """One PNG per z slice of a SignalMap, colorbar in dBm.

    Returns:
        List of file paths written.
    """
    paths = []
    for k in range(smap.shape[2]):
        data = smap.rss[:, :, k].T  # (y, x) for imshow
        fig, ax = plt.subplots(figsize=(6, 5))
        img = ax.imshow(data, origin="lower", cmap="viridis",
                        extent=(smap.bounds_lo[0], smap.bounds_hi[0],
                                smap.bounds_lo[1], smap.bounds_hi[1]))
        fig.colorbar(img, ax=ax, label="best RSS (dBm)")
        z = smap.bounds_lo[2] + (k + 0.5) * smap.resolution
        ax.set_title(f"signal map, z = {z:.2f} m")
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
        fig.tight_layout()
        path = f"{path_base}_z{k}.png"
        fig.savefig(path, dpi=DPI)
        plt.close(fig)
        paths.append(path)
    return paths

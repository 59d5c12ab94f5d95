"""Matplotlib rendering for the report path.

Figures are presentation artifacts alongside the delimited outputs; the
CSVs stay the canonical, bit-stable record.  Everything renders through the
Agg backend so the CLI works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 150


def render_histogram(counts, edges, path, title=""):
    fig, ax = plt.subplots(figsize=(6, 4))
    centers = 0.5 * (np.asarray(edges[:-1]) + np.asarray(edges[1:]))
    width = edges[1] - edges[0]
    ax.bar(centers, counts, width=width * 0.92, color="#3f7fbf", edgecolor="none")
    ax.set_xlabel("within-cluster viewing angle difference (deg)")
    ax.set_ylabel("pair count")
    ax.set_xlim(0, 180)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_occupancy(sizes, path, title=""):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(np.arange(len(sizes)), sizes, width=0.85, color="#bf5f3f", edgecolor="none")
    ax.set_xlabel("cluster rank (by size)")
    ax.set_ylabel("images in cluster")
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_scatter(table, path):
    metrics = [k for k in table if k != "angle_deg"]
    fig, axes = plt.subplots(1, len(metrics), figsize=(5 * len(metrics), 4), squeeze=False)
    for ax, key in zip(axes[0], metrics):
        ax.scatter(table["angle_deg"], table[key], s=6, alpha=0.55, color="#3f7fbf")
        ax.set_xlabel("viewing angle difference (deg)")
        ax.set_ylabel(f"rotation-invariant {key[2:]} distance")
        ax.set_xlim(0, 180)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_centroid_grid(model, top, path, per_row=8):
    sizes = model.cluster_sizes()
    order = np.lexsort((np.arange(model.k), -sizes))[:top]
    rows = int(np.ceil(top / per_row))
    cols = min(top, per_row)
    fig, axes = plt.subplots(rows, cols, figsize=(1.6 * cols, 1.8 * rows), squeeze=False)
    for slot in range(rows * cols):
        ax = axes[slot // per_row][slot % per_row]
        ax.axis("off")
        if slot < top:
            j = order[slot]
            ax.imshow(model.centroids[j].T, cmap="gray", origin="lower")
            ax.set_title(f"n={sizes[j]}", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_loss_trace(traces, path):
    """traces: {label: [loss per iteration]}"""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, trace in traces.items():
        ax.plot(np.arange(1, len(trace) + 1), trace, marker="o", ms=3, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)

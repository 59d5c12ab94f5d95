"""Evaluation harness: angular coherence, occupancy, timing, noise scatter.

Quantifies a clustering run against ground-truth orientations and emits the
report artifacts: report.json, angular_histogram.csv, occupancy.csv,
scatter.csv, 16-bit PGM centroid panels, and rendered figures.  All
pairwise angle statistics use the synthetic ground truth, never estimated
poses.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster import ClusterModel, assign_only
from .metrics import RotationGrid, StackSet
from .phantom.dataset import ProjectionSet
from .phantom.orientations import Orientation, angular_difference

HIST_BINS = 36  # 5 degree bins over [0, 180]


class DataError(ValueError):
    pass


@dataclass
class EvalReport:
    bin_edges_deg: np.ndarray       # (37,)
    histogram: np.ndarray           # (36,) pair counts
    median_angle_deg: float | None
    occupancy: np.ndarray           # descending cluster sizes
    occupancy_cv: float
    metric: str
    k: int
    n: int
    pair_count: int = 0
    timing: dict = field(default_factory=dict)


def _viewing_directions(orientations: list[Orientation]) -> np.ndarray:
    return np.array([o.viewing_direction for o in orientations])


def angular_coherence(model: ClusterModel, orientations: list[Orientation]):
    """Histogram (36 x 5 degree bins) and median of within-cluster pairwise
    ground-truth viewing-angle differences."""
    if len(orientations) < model.n:
        raise DataError(f"{len(orientations)} orientations for {model.n} assigned images")
    dirs = _viewing_directions(orientations[: model.n])
    angles = []
    for j in range(model.k):
        members = np.flatnonzero(model.cluster_ids == j)
        if members.size < 2:
            continue
        sub = dirs[members]
        chord = np.linalg.norm(sub[:, None, :] - sub[None, :, :], axis=2)
        ang = 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))
        iu = np.triu_indices(members.size, k=1)
        angles.append(np.degrees(ang[iu]))
    if angles:
        flat = np.concatenate(angles)
        counts, edges = np.histogram(flat, bins=HIST_BINS, range=(0.0, 180.0))
        median = float(np.median(flat))
    else:
        flat = np.array([])
        counts = np.zeros(HIST_BINS, dtype=np.int64)
        edges = np.linspace(0.0, 180.0, HIST_BINS + 1)
        median = None
    return counts, edges, median, flat.size


def occupancy_curve(model: ClusterModel):
    """Descending cluster sizes and their coefficient of variation."""
    sizes = np.sort(model.cluster_sizes())[::-1]
    mean = sizes.mean()
    cv = float(sizes.std() / mean) if mean > 0 else 0.0
    return sizes, cv


# --- 16-bit PGM -------------------------------------------------------------


def write_pgm16(path, image: np.ndarray):
    """Min-max normalize to 16-bit grayscale and write binary PGM (P5,
    big-endian sample order per the format).  Constant images map to
    mid-gray."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        scaled = np.round((img - lo) / (hi - lo) * 65535.0)
    else:
        scaled = np.full_like(img, 32768.0)
    data = scaled.astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode())
        fh.write(data.tobytes())


def read_pgm16(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5" or parts[2] != b"65535":
        raise DataError(f"{path}: not a 16-bit binary PGM")
    w, h = (int(t) for t in parts[1].split())
    return np.frombuffer(parts[3], dtype=">u2", count=w * h).reshape(h, w)


def centroid_panel(model: ClusterModel, top: int, out_dir) -> list[Path]:
    """Write the centroids of the `top` largest clusters as PGM files,
    sorted by size (descending, cluster index breaking ties)."""
    if top > model.k:
        raise ValueError(f"top={top} exceeds k={model.k}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sizes = model.cluster_sizes()
    order = np.lexsort((np.arange(model.k), -sizes))[:top]
    paths = []
    for rank, j in enumerate(order):
        path = out / f"centroid_{rank:03d}.pgm"
        write_pgm16(path, model.centroids[j])
        paths.append(path)
    return paths


def noise_scatter(dataset: ProjectionSet, reference_index: int, metrics=("l2", "wemd"),
                  m: int = 100, levels: int = 6, threads=None) -> dict:
    """Distances from one clean reference projection to every dataset image
    against their ground-truth viewing-angle difference.

    Returns {"angle_deg": ..., "d_<metric>": ...} arrays ordered by image.
    """
    if dataset.clean is None:
        raise DataError("dataset retains no clean stack; regenerate with keep_clean")
    if not 0 <= reference_index < dataset.n:
        raise IndexError(f"reference index {reference_index} outside 0..{dataset.n - 1}")
    ref_img = dataset.clean[reference_index].astype(np.float64)
    ref_orient = dataset.orientations[reference_index]
    angles = np.array([
        np.degrees(angular_difference(ref_orient, o)) for o in dataset.orientations
    ])
    table = {"angle_deg": angles}
    for metric in metrics:
        ss = StackSet(dataset.images, RotationGrid(m), metric, dataset.pixel_size, levels=levels)
        _, _, dist = ss.assign(ref_img[None])
        table[f"d_{metric}"] = dist
    return table


def timing_report(models: list[ClusterModel]) -> dict:
    """Mean wall-clock seconds per assignment/update pass, per metric."""
    report = {}
    for model in models:
        entry = report.setdefault(model.metric, {
            "runs": 0, "iterations": [], "assign_mean_s": [], "update_mean_s": [],
        })
        entry["runs"] += 1
        entry["iterations"].append(model.iterations)
        if model.assign_seconds:
            entry["assign_mean_s"].append(float(np.mean(model.assign_seconds)))
        if model.update_seconds:
            entry["update_mean_s"].append(float(np.mean(model.update_seconds)))
    for entry in report.values():
        for key in ("assign_mean_s", "update_mean_s"):
            vals = entry[key]
            entry[key.replace("_s", "_overall_s")] = float(np.mean(vals)) if vals else None
    if "l2" in report and "wemd" in report:
        a = report["wemd"].get("assign_mean_overall_s")
        b = report["l2"].get("assign_mean_overall_s")
        if a and b:
            report["wemd_over_l2_assign_ratio"] = a / b
    return report


# --- report assembly --------------------------------------------------------


def evaluate(model: ClusterModel, dataset: ProjectionSet, out_dir, top: int = 8,
             render: bool = True) -> EvalReport:
    """Produce the full evaluation artifact set for one run."""
    if dataset.n != model.n:
        raise DataError(f"dataset has {dataset.n} images but the run assigned {model.n}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    counts, edges, median, pairs = angular_coherence(model, dataset.orientations)
    sizes, cv = occupancy_curve(model)

    with open(out / "angular_histogram.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_start_deg", "bin_end_deg", "count", "normalized"])
        total = max(int(counts.sum()), 1)
        for b in range(HIST_BINS):
            writer.writerow([repr(float(edges[b])), repr(float(edges[b + 1])),
                             int(counts[b]), repr(counts[b] / total)])

    with open(out / "occupancy.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "size"])
        for rank, size in enumerate(sizes):
            writer.writerow([rank, int(size)])

    paths = centroid_panel(model, min(top, model.k), out)

    timing = timing_report([model])
    with open(out / "timing.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "phase", "mean_seconds", "passes"])
        entry = timing[model.metric]
        writer.writerow([model.metric, "assign", repr(entry["assign_mean_overall_s"]),
                         len(model.assign_seconds)])
        writer.writerow([model.metric, "update", repr(entry["update_mean_overall_s"]),
                         len(model.update_seconds)])
        writer.writerow([model.metric, "iterations", repr(float(model.iterations)), model.iterations])
    report = EvalReport(
        bin_edges_deg=edges, histogram=counts, median_angle_deg=median,
        occupancy=sizes, occupancy_cv=cv, metric=model.metric, k=model.k,
        n=model.n, pair_count=pairs, timing=timing,
    )
    payload = {
        "metric": model.metric,
        "k": model.k,
        "n": model.n,
        "m": model.m,
        "seed": model.seed,
        "iterations": model.iterations,
        "loss_trace": model.loss_trace,
        "median_angle_deg": median,
        "pair_count": pairs,
        "occupancy": [int(s) for s in sizes],
        "occupancy_cv": cv,
        "histogram_counts": [int(c) for c in counts],
        "centroid_panels": [p.name for p in paths],
    }
    (out / "report.json").write_text(json.dumps(payload, indent=1, sort_keys=True))

    if render:
        from . import figures

        figures.render_histogram(counts, edges, out / "angular_histogram.png",
                                 title=f"{model.metric}: within-cluster angular differences")
        figures.render_occupancy(sizes, out / "occupancy.png",
                                 title=f"{model.metric}: cluster occupancy")
        figures.render_centroid_grid(model, min(top, model.k), out / "centroids.png")
    return report


def write_scatter(table: dict, out_path, render: bool = True):
    """Persist a noise_scatter table as CSV (and a rendered figure)."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    keys = ["angle_deg"] + [k for k in table if k != "angle_deg"]
    n = len(table["angle_deg"])
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        for i in range(n):
            writer.writerow([repr(float(table[k][i])) for k in keys])
    if render:
        from . import figures

        figures.render_scatter(table, out_path.with_suffix(".png"))

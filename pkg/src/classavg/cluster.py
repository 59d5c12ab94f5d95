"""Rotationally-invariant k-means with k-means++ initialization.

The assignment step minimizes the chosen metric jointly over clusters and
the in-plane rotation grid (ties to the smallest (cluster, rotation) pair);
the update step averages members after rotating each back by the inverse of
its best rotation.  The loss is the sum of squared distances recorded after
every assignment pass.  Under the wavelet-EMD metric the mean update is not
guaranteed to lower the loss; runs that would regress instead stop at the
best model seen, with a warning in the model record.

Everything is a pure function of (dataset, parameters, seed): the rotation
cache, assignment kernels and fixed-order reductions make results
bit-identical across thread counts.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._kernels import thread_budget
from .metrics import RotationGrid, StackSet
from .phantom.dataset import ProjectionSet
from .wavelet import DEFAULT_LEVELS

log = logging.getLogger(__name__)

DEFAULT_REL_TOL = 1e-4
DEFAULT_MAX_ITERS = 100


class InvalidKError(ValueError):
    pass


@dataclass
class ClusterModel:
    """Fitted model: centroid images plus per-image alignment/assignment."""

    k: int
    metric: str
    m: int
    seed: int
    centroids: np.ndarray          # (k, N, N) float64
    cluster_ids: np.ndarray        # (n,) int
    rotation_ids: np.ndarray       # (n,) int, centroid-rotation convention
    distances: np.ndarray          # (n,) float64
    loss_trace: list[float]
    iterations: int
    pixel_size: float
    levels: int = DEFAULT_LEVELS
    init_indices: list[int] = field(default_factory=list)
    assign_seconds: list[float] = field(default_factory=list)
    update_seconds: list[float] = field(default_factory=list)
    init_seconds: float = 0.0
    stopped_on_regression: bool = False

    @property
    def n(self) -> int:
        return self.cluster_ids.shape[0]

    @property
    def loss(self) -> float:
        return self.loss_trace[-1]

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.cluster_ids, minlength=self.k)


def _as_images(dataset) -> tuple[np.ndarray, float]:
    if isinstance(dataset, ProjectionSet):
        return dataset.images, dataset.pixel_size
    arr = np.asarray(dataset)
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValueError(f"expected a ProjectionSet or (n, N, N) stack, got shape {arr.shape}")
    return arr, 2.0 / arr.shape[1]


def d2_sample_index(rng: np.random.Generator, weights: np.ndarray) -> int:
    """Draw an index with probability proportional to the given weights."""
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise ValueError("weights sum to zero")
    return int(rng.choice(weights.size, p=weights / total))


def _build_stackset(dataset, metric, m, levels, dtype) -> StackSet:
    images, pixel_size = _as_images(dataset)
    return StackSet(images, RotationGrid(m), metric, pixel_size, levels=levels, dtype=dtype)


def kmeanspp_init(dataset, k, metric="wemd", m=200, seed=0, levels=DEFAULT_LEVELS,
                  dtype=np.float32, stackset: StackSet | None = None,
                  threads: int | None = None) -> tuple[np.ndarray, list[int]]:
    """Rotationally-invariant k-means++ seeding.

    The first center is uniform; each subsequent one is drawn with
    probability proportional to the squared rotationally-invariant distance
    to its nearest chosen center.  Returns (centroids, chosen indices).
    """
    ss = stackset if stackset is not None else _build_stackset(dataset, metric, m, levels, dtype)
    n = ss.n
    if not 1 <= k <= n:
        raise InvalidKError(f"k must be in 1..{n}, got {k}")
    thread_budget(threads)
    rng = np.random.default_rng([seed, 2])
    chosen = [int(rng.integers(n))]
    weights = np.full(n, np.inf)
    while len(chosen) < k:
        center = ss.images[chosen[-1]].astype(np.float64)
        _, _, dist = ss.assign(center[None])
        weights = np.minimum(weights, dist.astype(np.float64) ** 2)
        weights[chosen] = 0.0
        if weights.sum() > 0:
            idx = d2_sample_index(rng, weights)
        else:
            # duplicate images: every candidate sits on a chosen center
            unchosen = np.setdiff1d(np.arange(n), np.array(chosen))
            idx = int(unchosen[rng.integers(unchosen.size)])
        chosen.append(idx)
    centroids = ss.images[np.array(chosen)].astype(np.float64)
    return centroids, chosen


def _update_centroids(ss: StackSet, cluster_ids, rotation_ids, distances, k):
    """Mean of inverse-rotated members per cluster, in fixed image order.

    Empty clusters are re-seeded with the worst-fit image (largest
    distance, smallest index on ties), which is removed from its donor
    cluster before means are taken.
    """
    n, size = ss.n, ss.size
    m = ss.grid.count
    cluster_ids = cluster_ids.copy()
    rotation_ids = rotation_ids.copy()
    sizes = np.bincount(cluster_ids, minlength=k)
    if np.any(sizes == 0):
        order = np.argsort(-distances, kind="stable")  # worst fit first
        cursor = 0
        for j in np.flatnonzero(sizes == 0):
            while cursor < order.size:
                cand = int(order[cursor])
                cursor += 1
                if sizes[cluster_ids[cand]] > 1:  # keep donors nonempty
                    sizes[cluster_ids[cand]] -= 1
                    cluster_ids[cand] = j
                    rotation_ids[cand] = 0
                    sizes[j] = 1
                    break
    centroids = np.zeros((k, size, size), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    for i in range(n):
        j = cluster_ids[i]
        q = (m - rotation_ids[i]) % m
        centroids[j] += ss.rotated(i, q).astype(np.float64)
        counts[j] += 1
    centroids /= counts[:, None, None]
    return centroids, cluster_ids, rotation_ids


def fit(dataset, k, metric="wemd", m=200, seed=0, max_iters=DEFAULT_MAX_ITERS,
        rel_tol=DEFAULT_REL_TOL, levels=DEFAULT_LEVELS, dtype=np.float32,
        threads: int | None = None) -> ClusterModel:
    """Run rotationally-invariant k-means and return the fitted model."""
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    if rel_tol < 0:
        raise ValueError(f"rel_tol must be >= 0, got {rel_tol}")
    ss = _build_stackset(dataset, metric, m, levels, dtype)
    if not 1 <= k <= ss.n:
        raise InvalidKError(f"k must be in 1..{ss.n}, got {k}")
    thread_budget(threads)

    t0 = time.perf_counter()
    centroids, init_indices = kmeanspp_init(None, k, metric, m, seed, levels, dtype,
                                            stackset=ss, threads=threads)
    init_seconds = time.perf_counter() - t0

    loss_trace: list[float] = []
    assign_seconds: list[float] = []
    update_seconds: list[float] = []
    best = None
    stopped_on_regression = False

    for iteration in range(1, max_iters + 1):
        t0 = time.perf_counter()
        cluster_ids, rotation_ids, distances = ss.assign(centroids)
        assign_seconds.append(time.perf_counter() - t0)
        loss = float(np.sum(distances.astype(np.float64) ** 2))

        if best is not None and loss > best[0] + 1e-9:
            # mean update regressed the loss (possible under wemd); keep
            # the best model and drop this pass from the trace
            log.warning("loss increased from %.6g to %.6g at iteration %d; "
                        "stopping at the best seen model", best[0], loss, iteration)
            stopped_on_regression = True
            break
        loss_trace.append(loss)
        best = (loss, centroids, cluster_ids, rotation_ids, distances)
        if best[0] == 0.0 or (len(loss_trace) > 1 and
                              loss_trace[-2] - loss < rel_tol * max(loss_trace[-2], 1e-300)):
            break
        if iteration == max_iters:
            break
        t0 = time.perf_counter()
        centroids, cluster_ids, rotation_ids = _update_centroids(
            ss, cluster_ids, rotation_ids, distances, k)
        update_seconds.append(time.perf_counter() - t0)

    loss, centroids, cluster_ids, rotation_ids, distances = best
    return ClusterModel(
        k=k, metric=metric, m=m, seed=seed, centroids=centroids,
        cluster_ids=cluster_ids.astype(np.int64), rotation_ids=rotation_ids.astype(np.int64),
        distances=distances.astype(np.float64), loss_trace=loss_trace,
        iterations=len(loss_trace), pixel_size=ss.pixel_size, levels=levels,
        init_indices=[int(i) for i in init_indices],
        assign_seconds=assign_seconds, update_seconds=update_seconds,
        init_seconds=init_seconds, stopped_on_regression=stopped_on_regression,
    )


def assign_only(dataset, centroids, metric="wemd", m=200, levels=DEFAULT_LEVELS,
                dtype=np.float32, threads: int | None = None):
    """One pure assignment pass against fixed centroids.

    Returns (cluster_ids, rotation_ids, distances, loss).
    """
    ss = _build_stackset(dataset, metric, m, levels, dtype)
    cents = np.asarray(centroids, dtype=np.float64)
    if cents.ndim != 3 or cents.shape[1:] != (ss.size, ss.size):
        raise ValueError(f"centroid shape {cents.shape} does not match images ({ss.size})")
    thread_budget(threads)
    cluster_ids, rotation_ids, distances = ss.assign(cents)
    loss = float(np.sum(distances.astype(np.float64) ** 2))
    return cluster_ids, rotation_ids, distances, loss


# --- run directory io -------------------------------------------------------


def save_run(model: ClusterModel, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "k": model.k,
        "metric": model.metric,
        "m": model.m,
        "seed": model.seed,
        "n": model.n,
        "size": int(model.centroids.shape[1]),
        "levels": model.levels,
        "pixel_size": model.pixel_size,
        "iterations": model.iterations,
        "loss_trace": model.loss_trace,
        "init_indices": model.init_indices,
        "stopped_on_regression": model.stopped_on_regression,
        "timing": {
            "init_seconds": model.init_seconds,
            "assign_seconds": model.assign_seconds,
            "update_seconds": model.update_seconds,
        },
    }
    (out / "model.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    with open(out / "assignments.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "cluster_id", "rotation_index", "distance"])
        for i in range(model.n):
            writer.writerow([i, int(model.cluster_ids[i]), int(model.rotation_ids[i]),
                             repr(float(model.distances[i]))])
    model.centroids.astype("<f4").tofile(out / "centroids.f32")


def load_run(run_dir) -> ClusterModel:
    root = Path(run_dir)
    meta = json.loads((root / "model.json").read_text())
    k, size = meta["k"], meta["size"]
    centroids = np.fromfile(root / "centroids.f32", dtype="<f4").reshape(k, size, size)
    ids, rots, dists = [], [], []
    with open(root / "assignments.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            ids.append(int(row["cluster_id"]))
            rots.append(int(row["rotation_index"]))
            dists.append(float(row["distance"]))
    timing = meta.get("timing", {})
    return ClusterModel(
        k=k, metric=meta["metric"], m=meta["m"], seed=meta["seed"],
        centroids=centroids.astype(np.float64),
        cluster_ids=np.array(ids, dtype=np.int64),
        rotation_ids=np.array(rots, dtype=np.int64),
        distances=np.array(dists, dtype=np.float64),
        loss_trace=list(meta["loss_trace"]), iterations=meta["iterations"],
        pixel_size=meta["pixel_size"], levels=meta["levels"],
        init_indices=list(meta.get("init_indices", [])),
        assign_seconds=list(timing.get("assign_seconds", [])),
        update_seconds=list(timing.get("update_seconds", [])),
        init_seconds=timing.get("init_seconds", 0.0),
        stopped_on_regression=meta.get("stopped_on_regression", False),
    )

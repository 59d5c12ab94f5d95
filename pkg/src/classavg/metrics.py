"""Rotation machinery and the rotationally-invariant distance layer.

A distance between an image and a centroid is minimized over a discrete
grid of in-plane rotations.  Images are rotated once and cached (as flat
metric embeddings: raw pixels for l2, weighted wavelet coefficients for
wemd) and centroids stay unrotated; the reported rotation index follows the
centroid-rotation convention of the clustering loop, so index r means "the
centroid rotated by theta_r matches the image", which the cache realizes by
comparing the image copy rotated by theta_{(m-r) mod m}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels, wavelet
from .wavelet import DEFAULT_LEVELS, approx_w1, dwt2

METRICS = ("l2", "wemd")


def _check_metric(metric: str):
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


@dataclass(frozen=True)
class RotationGrid:
    """Uniform grid of m in-plane rotation angles, theta_r = 2 pi r / m."""

    count: int = 200

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("rotation count must be >= 1")

    @property
    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.count) / self.count


_ROT_TABLES: dict[tuple[int, float], tuple[np.ndarray, np.ndarray]] = {}


def _rotation_table(n: int, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-(size, angle) bilinear gather table: (N^2, 4) indices and weights.

    Out-of-grid corners get weight zero (zero fill), indices clamped in
    range so gathers stay valid.
    """
    key = (n, float(theta))
    if key in _ROT_TABLES:
        return _ROT_TABLES[key]
    c = (n - 1) / 2.0
    xs, ys = np.meshgrid(np.arange(n) - c, np.arange(n) - c, indexing="ij")
    ct, st = np.cos(theta), np.sin(theta)
    sx = (ct * xs + st * ys + c).ravel()
    sy = (-st * xs + ct * ys + c).ravel()
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    idx = np.empty((n * n, 4), dtype=np.int64)
    wgt = np.empty((n * n, 4), dtype=np.float64)
    corners = [(x0, y0, (1 - fx) * (1 - fy)), (x0, y0 + 1, (1 - fx) * fy),
               (x0 + 1, y0, fx * (1 - fy)), (x0 + 1, y0 + 1, fx * fy)]
    for k, (cx, cy, w) in enumerate(corners):
        inside = (cx >= 0) & (cx < n) & (cy >= 0) & (cy < n)
        idx[:, k] = np.where(inside, cx * n + cy, 0)
        wgt[:, k] = np.where(inside, w, 0.0)
    _ROT_TABLES[key] = (idx, wgt)
    return idx, wgt


def rotate_image(image: np.ndarray, theta: float) -> np.ndarray:
    """Rotate a square image about its center by theta (bilinear, zero fill).

    theta = 0 returns a bit-exact copy.
    """
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"expected a square image, got shape {image.shape}")
    if theta == 0.0:
        return image.copy()
    return _rotate_flat(image.reshape(1, -1), image.shape[0], theta)[0].reshape(image.shape)


def _rotate_flat(flat: np.ndarray, n: int, theta: float) -> np.ndarray:
    """Rotate a (B, N^2) batch; arithmetic stays in the input dtype."""
    idx, wgt = _rotation_table(n, theta)
    out = np.zeros_like(flat)
    for k in range(4):
        out += flat[:, idx[:, k]] * wgt[:, k].astype(flat.dtype)
    return out


def base_distance(metric: str, a: np.ndarray, b: np.ndarray, pixel_size: float) -> float:
    """Plain (rotation-free) distance in ground units."""
    _check_metric(metric)
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if metric == "l2":
        diff = np.asarray(a, np.float64) - np.asarray(b, np.float64)
        return float(pixel_size * np.sqrt(np.sum(diff * diff)))
    return approx_w1(dwt2(a), dwt2(b), pixel_size)


@dataclass
class RotatedStack:
    """Per-angle rotated copies of one source image, stored as metric
    embeddings (pixels for l2, weighted wavelet coefficients for wemd).

    Pixel copies are materialized on demand through :meth:`rotated` rather
    than held; row 0 is bit-exact.
    """

    source_id: int
    image: np.ndarray
    grid: RotationGrid
    metric: str
    pixel_size: float
    levels: int
    embeddings: np.ndarray  # (m, P), stack dtype

    def __len__(self) -> int:
        return self.grid.count

    @property
    def dtype(self):
        return self.embeddings.dtype

    def rotated(self, q: int) -> np.ndarray:
        """Pixel copy rotated by theta_q (q = 0 is a bit-exact copy)."""
        angles = self.grid.angles
        if not 0 <= q < len(angles):
            raise IndexError(f"rotation row {q} outside 0..{len(angles) - 1}")
        return rotate_image(self.image, float(angles[q])) if q else self.image.copy()

    def embed(self, image: np.ndarray) -> np.ndarray:
        """Embed an arbitrary image through the stack's own metric path,
        so identical pixels give identical embedding bits."""
        return _embed(image, self.metric, self.levels, self.dtype)


def _embed(images: np.ndarray, metric: str, levels: int, dtype) -> np.ndarray:
    arr = np.asarray(images, dtype=dtype)
    if metric == "l2":
        if arr.ndim == 2:
            return arr.reshape(-1).copy()
        return arr.reshape(arr.shape[0], -1).copy()
    return wavelet.embed_images(arr, levels=levels, dtype=dtype)


def build_stack(
    image: np.ndarray,
    grid: RotationGrid,
    metric: str,
    pixel_size: float,
    levels: int = DEFAULT_LEVELS,
    dtype=np.float64,
    source_id: int = 0,
) -> RotatedStack:
    """Rotate one image over the grid and embed every copy."""
    _check_metric(metric)
    image = np.asarray(image, dtype=dtype)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"expected a square image, got shape {image.shape}")
    n = image.shape[0]
    m = grid.count
    copies = np.empty((m, n * n), dtype=dtype)
    flat = image.reshape(1, -1)
    copies[0] = flat[0]
    for q, theta in enumerate(grid.angles[1:], start=1):
        copies[q] = _rotate_flat(flat, n, float(theta))[0]
    emb = _embed(copies.reshape(m, n, n), metric, levels, dtype)
    return RotatedStack(
        source_id=source_id, image=image, grid=grid, metric=metric,
        pixel_size=pixel_size, levels=levels, embeddings=np.ascontiguousarray(emb),
    )


def _kernel_for(metric: str):
    return _kernels.assign_l1 if metric == "wemd" else _kernels.assign_l2


def _finish_distance(metric: str, acc: np.ndarray, pixel_size: float) -> np.ndarray:
    if metric == "l2":
        return pixel_size * np.sqrt(acc)
    return pixel_size * acc


def rotinv_distance(metric: str, stack: RotatedStack, centroid: np.ndarray) -> tuple[float, int]:
    """Min over the rotation grid of the base distance between the stack's
    rotated copies and an unrotated centroid.

    Returns (distance, rotation index in the centroid-rotation convention);
    ties break towards the smallest rotation index.
    """
    _check_metric(metric)
    if metric != stack.metric:
        raise ValueError(f"stack built for metric {stack.metric!r}, asked for {metric!r}")
    centroid = np.asarray(centroid)
    if centroid.shape != stack.image.shape:
        raise ValueError(f"shape mismatch: centroid {centroid.shape} vs image {stack.image.shape}")
    c_emb = stack.embed(centroid)[None, :]
    acc = np.empty(1, dtype=np.float64)
    bj = np.empty(1, dtype=np.int64)
    br = np.empty(1, dtype=np.int64)
    _kernel_for(metric)(stack.embeddings[None], c_emb, acc, bj, br)
    return float(_finish_distance(metric, acc, stack.pixel_size)[0]), int(br[0])


def rotinv_l2(i1, i2, m: int = 200, pixel_size: float = 1.0) -> float:
    """Rotationally-invariant Euclidean distance (ground units)."""
    stack = build_stack(np.asarray(i2, np.float64), RotationGrid(m), "l2", pixel_size)
    return rotinv_distance("l2", stack, np.asarray(i1, np.float64))[0]


def rotinv_w1(i1, i2, m: int = 200, pixel_size: float = 1.0, levels: int = DEFAULT_LEVELS) -> float:
    """Rotationally-invariant approximate W1 distance (ground units)."""
    stack = build_stack(np.asarray(i2, np.float64), RotationGrid(m), "wemd", pixel_size, levels=levels)
    return rotinv_distance("wemd", stack, np.asarray(i1, np.float64))[0]


class StackSet:
    """Rotated stacks of a whole dataset, packed for the clustering kernels.

    Holds one (n, m, P) embedding array; float32 by default to keep the
    criterion-scale cache in memory.  Individual images are exposed as
    :class:`RotatedStack` views sharing the packed storage.
    """

    def __init__(self, images, grid: RotationGrid, metric: str, pixel_size: float,
                 levels: int = DEFAULT_LEVELS, dtype=np.float32, chunk: int = 32):
        _check_metric(metric)
        images = np.asarray(images, dtype=dtype)
        if images.ndim != 3 or images.shape[1] != images.shape[2]:
            raise ValueError(f"expected (n, N, N) images, got {images.shape}")
        self.images = images
        self.grid = grid
        self.metric = metric
        self.pixel_size = float(pixel_size)
        self.levels = levels
        n, size = images.shape[0], images.shape[1]
        feasible = min(levels, wavelet.max_levels(size))
        p = size * size if metric == "l2" else wavelet.embedding_size(size, feasible)
        self.embeddings = np.empty((n, grid.count, p), dtype=dtype)
        flat = images.reshape(n, -1)
        angles = grid.angles
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            block = np.empty((hi - lo, grid.count, size * size), dtype=dtype)
            block[:, 0] = flat[lo:hi]
            for q in range(1, grid.count):
                block[:, q] = _rotate_flat(flat[lo:hi], size, float(angles[q]))
            emb = _embed(block.reshape(-1, size, size), metric, levels, dtype)
            self.embeddings[lo:hi] = emb.reshape(hi - lo, grid.count, p)

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def size(self) -> int:
        return self.images.shape[1]

    def stack(self, i: int) -> RotatedStack:
        return RotatedStack(
            source_id=i, image=self.images[i], grid=self.grid, metric=self.metric,
            pixel_size=self.pixel_size, levels=self.levels, embeddings=self.embeddings[i],
        )

    def embed(self, image: np.ndarray) -> np.ndarray:
        return _embed(image, self.metric, self.levels, self.embeddings.dtype)

    def embed_batch(self, images: np.ndarray) -> np.ndarray:
        return _embed(np.asarray(images), self.metric, self.levels, self.embeddings.dtype)

    def rotated(self, i: int, q: int) -> np.ndarray:
        return self.stack(i).rotated(q)

    def assign(self, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Best (cluster, rotation, distance) per image against a batch of
        unrotated centroids; ties go to the smallest (cluster, rotation)."""
        cents = np.asarray(centroids)
        if cents.ndim != 3 or cents.shape[1:] != self.images.shape[1:]:
            raise ValueError(f"centroid batch shape {cents.shape} does not match images")
        c_emb = np.ascontiguousarray(self.embed_batch(cents))
        acc = np.empty(self.n, dtype=np.float64)
        bj = np.empty(self.n, dtype=np.int64)
        br = np.empty(self.n, dtype=np.int64)
        _kernel_for(self.metric)(self.embeddings, c_emb, acc, bj, br)
        return bj, br, _finish_distance(self.metric, acc, self.pixel_size)

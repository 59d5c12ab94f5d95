"""Tomographic projection of a volume along a rotated z axis."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .orientations import Orientation
from .volume import Volume


def _box_resample_matrix(n_out: int, n_in: int) -> np.ndarray:
    """1D mass-redistributing box filter: rows are output cells, columns
    input cells, every column sums to 1 so total mass is conserved."""
    edges_out = np.linspace(0.0, 1.0, n_out + 1)
    edges_in = np.linspace(0.0, 1.0, n_in + 1)
    mat = np.zeros((n_out, n_in))
    width_in = 1.0 / n_in
    for u in range(n_out):
        lo = np.maximum(edges_in[:-1], edges_out[u])
        hi = np.minimum(edges_in[1:], edges_out[u + 1])
        mat[u] = np.clip(hi - lo, 0.0, None) / width_in
    return mat


def project(volume: Volume, orientation: Orientation, out_size: int) -> np.ndarray:
    """Clean projection image: rotate the density, sum along z, resample.

    The rotated density is evaluated by trilinear interpolation (zero
    outside the grid), summed over z with the voxel depth as line-element,
    then pushed through a mass-preserving box filter onto out_size^2
    pixels.  Pixel values are per-pixel masses; the image total equals the
    volume mass times the voxel depth up to interpolation leakage.
    """
    if out_size < 8:
        raise ValueError(f"out_size must be >= 8, got {out_size}")
    side = volume.side
    rt = orientation.rotation.T
    # index -> physical is idx * h + b with b = h/2 - extent; conjugate R^T by it
    h = volume.voxel_size
    b = h / 2.0 - volume.extent
    offset = (rt @ np.full(3, b) - np.full(3, b)) / h
    rotated = ndimage.affine_transform(
        volume.data, rt, offset=offset, order=1, mode="constant", cval=0.0, prefilter=False
    )
    img = rotated.sum(axis=2) * h
    if out_size == side:
        return img
    box = _box_resample_matrix(out_size, side)
    return box @ img @ box.T

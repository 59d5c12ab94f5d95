"""3D density volumes built from Gaussian blob phantoms.

The grid always spans the cube [-1, 1]^3 circumscribing the unit ball;
phantom densities are hard-clipped to zero outside the ball so that the
transport-theoretic bounds (which assume ball support) hold on the voxel
grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class InvalidPhantomSpec(ValueError):
    pass


@dataclass(frozen=True)
class GaussianBlob:
    center: tuple[float, float, float]
    widths: tuple[float, float, float]
    weight: float

    def validate(self):
        c = np.asarray(self.center, dtype=float)
        w = np.asarray(self.widths, dtype=float)
        if c.shape != (3,) or w.shape != (3,):
            raise InvalidPhantomSpec(f"blob needs 3D center and widths, got {self.center}, {self.widths}")
        if np.linalg.norm(c) >= 1.0:
            raise InvalidPhantomSpec(f"blob center {self.center} outside the open unit ball")
        if np.any(w <= 0):
            raise InvalidPhantomSpec(f"blob widths must be positive, got {self.widths}")
        if self.weight <= 0:
            raise InvalidPhantomSpec(f"blob weight must be positive, got {self.weight}")


@dataclass
class Volume:
    """Nonnegative density on a cubic voxel grid, indexed (x, y, z).

    ``extent`` is the physical half-width of the grid, fixed at 1.0.
    """

    side: int
    data: np.ndarray
    extent: float = 1.0
    provenance: str = "unspecified"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.side < 8:
            raise ValueError(f"volume side must be >= 8, got {self.side}")
        if self.data.shape != (self.side,) * 3:
            raise ValueError(f"data shape {self.data.shape} does not match side {self.side}")
        if np.any(self.data < 0):
            raise ValueError("volume densities must be nonnegative")
        if self.data.sum() <= 0:
            raise ValueError("volume must carry positive total mass")

    @property
    def voxel_size(self) -> float:
        return 2.0 * self.extent / self.side

    @property
    def mass(self) -> float:
        return float(self.data.sum())

    def grid_coords(self) -> np.ndarray:
        """Voxel center coordinates along one axis."""
        return (np.arange(self.side) + 0.5) * self.voxel_size - self.extent

    def normalized(self) -> "Volume":
        """Copy scaled to unit total mass (a probability distribution)."""
        return Volume(self.side, self.data / self.data.sum(), extent=self.extent,
                      provenance=self.provenance)


def _parse_blobs(spec) -> list[GaussianBlob]:
    if isinstance(spec, (str, Path)):
        with open(spec) as fh:
            spec = json.load(fh)
    if isinstance(spec, dict) and "blobs" in spec:
        spec = spec["blobs"]
    blobs = []
    for entry in spec:
        if isinstance(entry, GaussianBlob):
            blob = entry
        else:
            blob = GaussianBlob(
                center=tuple(entry["center"]),
                widths=tuple(entry["widths"]),
                weight=float(entry["weight"]),
            )
        blob.validate()
        blobs.append(blob)
    if not blobs:
        raise InvalidPhantomSpec("phantom spec lists no blobs")
    return blobs


def load_phantom(spec, side: int = 64) -> Volume:
    """Evaluate a Gaussian-blob phantom on a side^3 grid.

    ``spec`` is a JSON path, a list of blob dicts {center, widths, weight},
    or GaussianBlob objects.  Voxel centers outside the unit ball are
    clipped to zero.  Deterministic.
    """
    blobs = _parse_blobs(spec)
    if side < 8:
        raise InvalidPhantomSpec(f"side must be >= 8, got {side}")
    axis = (np.arange(side) + 0.5) * (2.0 / side) - 1.0
    x, y, z = np.meshgrid(axis, axis, axis, indexing="ij")
    data = np.zeros((side,) * 3)
    for blob in blobs:
        cx, cy, cz = blob.center
        wx, wy, wz = blob.widths
        data += blob.weight * np.exp(
            -0.5 * (((x - cx) / wx) ** 2 + ((y - cy) / wy) ** 2 + ((z - cz) / wz) ** 2)
        )
    data[x * x + y * y + z * z > 1.0] = 0.0
    return Volume(side, data, provenance="phantom")

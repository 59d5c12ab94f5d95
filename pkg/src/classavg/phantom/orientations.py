"""Rotations in SO(3), Haar-uniform sampling, and viewing-angle geometry."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _quaternion_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class Orientation:
    """A rotation R in SO(3), kept with its unit quaternion (w, x, y, z).

    ``viewing_direction`` is R^T e_z: the particle-frame axis along which
    the density is projected, i.e. the orientation modulo in-plane spin.
    """

    quaternion: tuple[float, float, float, float]

    @classmethod
    def from_quaternion(cls, q) -> "Orientation":
        q = np.asarray(q, dtype=np.float64)
        norm = np.linalg.norm(q)
        if q.shape != (4,) or norm == 0:
            raise ValueError(f"need a nonzero 4-vector quaternion, got {q}")
        if abs(norm - 1.0) > 1e-13:  # keep already-unit inputs bit-stable
            q = q / norm
        return cls(quaternion=tuple(q))

    @classmethod
    def identity(cls) -> "Orientation":
        return cls(quaternion=(1.0, 0.0, 0.0, 0.0))

    @property
    def rotation(self) -> np.ndarray:
        return _quaternion_matrix(np.asarray(self.quaternion))

    @property
    def viewing_direction(self) -> np.ndarray:
        return self.rotation[2, :].copy()  # R^T applied to (0, 0, 1)


def sample_orientation(rng: np.random.Generator) -> Orientation:
    """One Haar-uniform rotation (normalized 4D Gaussian quaternion)."""
    q = rng.normal(size=4)
    return Orientation.from_quaternion(q)


def angular_difference(u: Orientation, v: Orientation) -> float:
    """Angle in [0, pi] between the two viewing directions.

    Uses the chord form 2 asin(|u - v| / 2), which equals the clamped
    arccos of the dot product for unit vectors but is exact at 0.
    """
    chord = np.linalg.norm(u.viewing_direction - v.viewing_direction)
    return float(2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0)))

"""Projection dataset generation, SNR bookkeeping, and on-disk layout.

A dataset directory holds meta.json (counts, noise, seed, orientations as
unit quaternions plus viewing directions), images.f32 (raw little-endian
float32, image-major, row-major) and optionally clean.f32 in the same
layout.  Generation is a pure function of (volume, n, size, snr, seed):
orientations come from one seeded stream and every image's noise stream is
keyed by (seed, image index), so any parallel schedule reproduces the same
bits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .orientations import Orientation, sample_orientation
from .projection import project
from .volume import Volume


class DegenerateSignalError(ValueError):
    """Clean stack carries no signal energy, so no sigma satisfies the SNR."""


@dataclass
class ProjectionSet:
    """An image stack with per-image ground-truth orientations."""

    n: int
    size: int
    images: np.ndarray  # (n, size, size) float32, signed after noise
    orientations: list[Orientation]
    snr: float          # 0 means noiseless
    sigma: float
    seed: int
    volume_provenance: str = "unspecified"
    clean: np.ndarray | None = None

    @property
    def pixel_size(self) -> float:
        return 2.0 / self.size

    def __post_init__(self):
        if self.images.shape != (self.n, self.size, self.size):
            raise ValueError(f"images shape {self.images.shape} does not match n={self.n}, size={self.size}")
        if len(self.orientations) != self.n:
            raise ValueError(f"{len(self.orientations)} orientations for {self.n} images")


def compute_sigma(clean_stack: np.ndarray, target_snr: float) -> float:
    """Noise level sigma with SNR = ||D||^2 / (n N^2 sigma^2) over the stack."""
    if target_snr <= 0:
        raise ValueError(f"target_snr must be positive, got {target_snr}")
    stack = np.asarray(clean_stack, dtype=np.float64)
    if stack.ndim != 3 or stack.size == 0:
        raise ValueError(f"need a nonempty (n, N, N) stack, got shape {stack.shape}")
    energy = float(np.sum(stack * stack))
    if energy == 0.0:
        raise DegenerateSignalError("all-zero clean stack")
    n, size = stack.shape[0], stack.shape[1]
    return float(np.sqrt(energy / (n * size * size * target_snr)))


def _noise_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1, index])


def _orientation_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0])


def generate_dataset(
    volume: Volume,
    n: int,
    size: int,
    snr: float,
    seed: int,
    out_dir=None,
    keep_clean: bool = True,
) -> ProjectionSet:
    """Sample n orientations, project, and add Gaussian noise at the SNR.

    One sigma is computed from the whole clean stack (the SNR definition is
    stack-global, not per image).  snr = 0 keeps the stack noiseless with
    sigma recorded as 0.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if snr < 0:
        raise ValueError(f"snr must be >= 0, got {snr}")
    rng = _orientation_rng(seed)
    orientations = [sample_orientation(rng) for _ in range(n)]
    clean = np.empty((n, size, size), dtype=np.float32)
    for i, orient in enumerate(orientations):
        clean[i] = project(volume, orient, size).astype(np.float32)
    if snr > 0:
        sigma = compute_sigma(clean, snr)
        images = np.empty_like(clean)
        for i in range(n):
            noise = _noise_rng(seed, i).normal(0.0, sigma, size=(size, size))
            images[i] = (clean[i].astype(np.float64) + noise).astype(np.float32)
    else:
        sigma = 0.0
        images = clean.copy()
    dataset = ProjectionSet(
        n=n, size=size, images=images, orientations=orientations, snr=snr,
        sigma=sigma, seed=seed, volume_provenance=volume.provenance,
        clean=clean if keep_clean else None,
    )
    if out_dir is not None:
        save_dataset(dataset, out_dir)
    return dataset


def save_dataset(dataset: ProjectionSet, out_dir):
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        meta = {
            "n": dataset.n,
            "size": dataset.size,
            "snr": dataset.snr,
            "sigma": dataset.sigma,
            "seed": dataset.seed,
            "pixel_size": dataset.pixel_size,
            "volume": dataset.volume_provenance,
            "orientations": [
                {
                    "quaternion": list(o.quaternion),
                    "viewing": [float(c) for c in o.viewing_direction],
                }
                for o in dataset.orientations
            ],
        }
        (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
        dataset.images.astype("<f4").tofile(out / "images.f32")
        if dataset.clean is not None:
            dataset.clean.astype("<f4").tofile(out / "clean.f32")
    except OSError as err:
        raise OSError(f"failed writing dataset to {out}: {err}") from err


def load_dataset(path, need_clean: bool = False) -> ProjectionSet:
    root = Path(path)
    try:
        meta = json.loads((root / "meta.json").read_text())
        n, size = meta["n"], meta["size"]
        images = np.fromfile(root / "images.f32", dtype="<f4").reshape(n, size, size)
        clean_path = root / "clean.f32"
        clean = None
        if clean_path.exists():
            clean = np.fromfile(clean_path, dtype="<f4").reshape(n, size, size)
    except OSError as err:
        raise OSError(f"failed reading dataset from {root}: {err}") from err
    if need_clean and clean is None:
        raise FileNotFoundError(f"{root}: dataset retains no clean stack (clean.f32 missing)")
    orientations = [Orientation.from_quaternion(o["quaternion"]) for o in meta["orientations"]]
    return ProjectionSet(
        n=n, size=size, images=images, orientations=orientations,
        snr=meta["snr"], sigma=meta["sigma"], seed=meta["seed"],
        volume_provenance=meta.get("volume", "unspecified"), clean=clean,
    )

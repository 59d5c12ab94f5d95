import numpy as np
import pytest

from classavg.metrics import rotate_image


def _gauss_spot(n, cx, cy, width, amp=1.0):
    xs, ys = np.meshgrid(np.arange(n) - (n - 1) / 2, np.arange(n) - (n - 1) / 2, indexing="ij")
    return amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * width**2))


def make_three_blob_dataset(seed=0, per_group=10, size=16, noise=0.01):
    """Toy set of three rotationally-distinct patterns, each replicated as
    rotated copies: a centered spot, an offset spot (which sweeps a ring
    under rotation), and an opposite-pair dumbbell.  Radial structure keeps
    the groups far apart under any in-plane rotation while group members
    are near-exact rotations of each other.
    """
    n = size
    bases = [
        _gauss_spot(n, 0.0, 0.0, 1.6),
        _gauss_spot(n, 4.0, 0.0, 1.6),
        _gauss_spot(n, 4.0, 0.0, 1.3, 0.6) + _gauss_spot(n, -4.0, 0.0, 1.3, 0.6),
    ]
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for g, base in enumerate(bases):
        for _ in range(per_group):
            theta = 2 * np.pi * rng.integers(8) / 8
            img = rotate_image(base, float(theta))
            img += noise * rng.normal(size=img.shape)
            images.append(img.astype(np.float32))
            labels.append(g)
    order = rng.permutation(len(images))
    return np.stack(images)[order], np.array(labels)[order]


@pytest.fixture(scope="session")
def three_blob():
    return make_three_blob_dataset(seed=0)

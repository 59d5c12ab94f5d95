"""Synthetic 3D densities, uniform orientations, and projection datasets."""

from .volume import GaussianBlob, InvalidPhantomSpec, Volume, load_phantom
from .mrcio import UnsupportedMrcMode, UnsupportedMrcShape, load_mrc, write_mrc
from .orientations import Orientation, angular_difference, sample_orientation
from .projection import project
from .dataset import (
    DegenerateSignalError,
    ProjectionSet,
    compute_sigma,
    generate_dataset,
    load_dataset,
)

__all__ = [
    "GaussianBlob",
    "InvalidPhantomSpec",
    "Volume",
    "load_phantom",
    "UnsupportedMrcMode",
    "UnsupportedMrcShape",
    "load_mrc",
    "write_mrc",
    "Orientation",
    "angular_difference",
    "sample_orientation",
    "project",
    "DegenerateSignalError",
    "ProjectionSet",
    "compute_sigma",
    "generate_dataset",
    "load_dataset",
]

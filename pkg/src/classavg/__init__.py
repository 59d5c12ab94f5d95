"""Rotationally-invariant k-means clustering of tomographic projection images.

Provides a synthetic projection dataset generator, an L2 and a linear-time
wavelet approximation of the Wasserstein-1 metric (both made invariant to
in-plane rotations), a k-means/k-means++ clustering engine built on them, an
exact optimal-transport oracle for validation, and an evaluation harness.
"""

__version__ = "0.1.0"

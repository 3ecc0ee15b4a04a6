"""Convolutional Similarity: kernel-level control of feature-map orthogonality."""

__version__ = "0.1.0"

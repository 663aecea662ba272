"""Sparse video-text transformer toolkit: edge/node sparsity, EgoNCE, synthetic clips."""

__version__ = "0.1.0"

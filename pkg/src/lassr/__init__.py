"""Artifact-suppressed 4x GAN super-resolution with blob-mass penalty training."""

__version__ = "0.1.0"

"""Unsupervised feature extraction for paired spectral / elevation scenes.

A two-branch capsule autoencoder decomposes each image patch into
capsule poses and descriptors under rotation self-supervision; the
per-point feature maps of both branches are fused into one vector per
pixel and handed to a linear classifier for evaluation.
"""

from .config import TrainConfig
from .errors import DivergenceError, FormatError

__version__ = "0.1.0"

__all__ = ["TrainConfig", "DivergenceError", "FormatError", "__version__"]

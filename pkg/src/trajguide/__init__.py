"""Follow a recorded reference trajectory from image-space guidance triplets."""

__version__ = "0.1.0"

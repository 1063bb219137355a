"""Multi-task scene understanding: segmentation, depth and detection from one model."""

__version__ = "0.1.0"

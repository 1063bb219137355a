"""Input validation helpers shared by the training loop, estimator and CLI."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..data.synth import Sample
from ..errors import DataError, ShapeError

# images are scaled to roughly zero mean, unit range
PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


def images_to_array(images) -> np.ndarray:
    """Samples, (B, H, W, 3) uint8 or (B, 3, H, W) float -> normalized (B, 3, H, W) float64."""
    if isinstance(images, Sample):
        images = [images]
    if isinstance(images, (list, tuple)) and images and isinstance(images[0], Sample):
        images = np.stack([s.image for s in images])
    x = np.asarray(images)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ShapeError(f"expected a batch of images, got shape {x.shape}")
    if x.dtype == np.uint8:
        if x.shape[-1] != 3:
            raise ShapeError(f"uint8 images must be (B, H, W, 3), got {x.shape}")
        x = np.moveaxis(x.astype(np.float64) / 255.0, -1, 1)
        return (x - PIXEL_MEAN) / PIXEL_STD
    if x.shape[1] != 3:
        raise ShapeError(f"float images must be normalized (B, 3, H, W), got {x.shape}")
    x = x.astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError("images contain non-finite values")
    return x


def check_samples(samples: Sequence[Sample], labelled: bool = True) -> list:
    samples = list(samples)
    if not samples:
        raise DataError("empty sample list")
    shape = samples[0].mask.shape
    for i, s in enumerate(samples):
        if s.mask.shape != shape or s.image.shape[:2] != shape or s.depth.shape != shape:
            raise ShapeError(f"sample {s.name or i}: extents differ from the first sample {shape}")
        if labelled and not s.has_labels:
            raise DataError(f"sample {s.name or i} has no segmentation/detection labels")
    return samples


def check_divisible(height: int, width: int, factor: int) -> None:
    if height % factor or width % factor:
        ph = (-height) % factor
        pw = (-width) % factor
        raise ShapeError(
            f"image extents {height}x{width} are not divisible by {factor}; "
            f"pad by {ph} rows and {pw} columns to {height + ph}x{width + pw}"
        )

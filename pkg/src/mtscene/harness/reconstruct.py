"""Depth, point cloud and annotated overlay export for one image."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from PIL import Image, ImageDraw

from ..boxes import Detection
from ..data.io import write_depth_png
from ..data.synth import PALETTE, Sample
from ..errors import DataError
from ..recon3d import Intrinsics, PointCloud, backproject, write_ply
from .checkpoint import Checkpoint, load
from .evaluate import predict
from .validation import check_divisible

OVERLAY_ALPHA = 0.45


@dataclass
class Reconstruction:
    depth_path: Path
    ply_path: Path
    overlay_path: Path
    depth: np.ndarray
    mask: np.ndarray
    detections: List[Detection]
    cloud: PointCloud


def _load_image(source) -> tuple:
    if isinstance(source, Sample):
        return source.image, source.intrinsics, source.depth_scale_mm
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.is_file():
            raise DataError(f"image file {path} not found")
        try:
            with Image.open(path) as im:
                return np.array(im.convert("RGB")), None, None
        except OSError as exc:
            raise DataError(f"cannot read image {path}: {exc}") from exc
    arr = np.asarray(source)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise DataError(f"expected an (H, W, 3) uint8 image, got {arr.dtype} {arr.shape}")
    return arr, None, None


def overlay(image: np.ndarray, mask: np.ndarray, detections: List[Detection]) -> Image.Image:
    """Tint instrument pixels with their class colour and draw labelled boxes."""
    rgb = image.astype(np.float64) / 255.0
    tint = PALETTE[np.minimum(mask, len(PALETTE) - 1)]
    fg = (mask > 0)[..., None]
    mixed = np.where(fg, (1 - OVERLAY_ALPHA) * rgb + OVERLAY_ALPHA * tint, rgb)
    im = Image.fromarray(np.clip(np.rint(mixed * 255), 0, 255).astype(np.uint8), mode="RGB")
    draw = ImageDraw.Draw(im)
    for d in detections:
        colour = tuple(int(c) for c in np.rint(PALETTE[d.cls % len(PALETTE)] * 255))
        # boxes are half-open; the outline covers the last included pixel
        draw.rectangle([d.x0, d.y0, max(d.x1 - 1, d.x0), max(d.y1 - 1, d.y0)], outline=colour)
        draw.text((d.x0 + 1, d.y0), f"{d.cls}:{d.score:.2f}", fill=colour)
    return im


def reconstruct(
    checkpoint: Union[str, Path, Checkpoint],
    source,
    out_dir,
    stem: str = "scene",
    intrinsics: Optional[Intrinsics] = None,
    depth_scale_mm: Optional[float] = None,
    ply_format: str = "binary_little_endian",
) -> Reconstruction:
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load(checkpoint)
    image, k_src, scale_src = _load_image(source)
    H, W = image.shape[:2]
    check_divisible(H, W, ckpt.config.model.encoder.downsampling)
    k = intrinsics or k_src or Intrinsics.default(W, H)
    k.check_image(W, H)
    scale = depth_scale_mm or scale_src or ckpt.config.dataset.scene.depth_scale_mm

    cfg = ckpt.config
    model = ckpt.build_model()
    pred = predict(model, image[None], cfg.objectness_threshold, cfg.nms_iou)[0]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "depth": out / f"{stem}_depth.png",
        "ply": out / f"{stem}.ply",
        "overlay": out / f"{stem}_overlay.png",
    }
    write_depth_png(pred.depth, paths["depth"])
    cloud = backproject(pred.depth, image, k, scale, mask=pred.mask)
    write_ply(cloud, paths["ply"], ply_format)
    overlay(image, pred.mask, pred.detections).save(paths["overlay"])
    return Reconstruction(paths["depth"], paths["ply"], paths["overlay"], pred.depth, pred.mask, pred.detections, cloud)

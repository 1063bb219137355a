"""On-disk dataset format.

Per sample ``NNNNN``:

* ``NNNNN_image.png``  8-bit RGB
* ``NNNNN_mask.png``   8-bit indexed (palette) class labels
* ``NNNNN_depth.png``  16-bit grayscale, stored value ``floor(d * 65535 + 0.5)``
* ``NNNNN.json``       sidecar: boxes, intrinsics, depth_scale_mm, has_labels

``manifest.json`` at the dataset root lists split membership and global
metadata (scene config, class count, depth scale).
"""

from __future__ import annotations

import json
import os
import warnings
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from PIL import Image

from ..boxes import Box
from ..errors import DataError
from ..recon3d import Intrinsics
from .synth import PALETTE, Sample, SceneConfig, SplitSpec, generate_scene, sample_seed

DEPTH_LEVELS = 65535
MANIFEST = "manifest.json"
FORMAT_VERSION = 1


def quantize_depth(depth: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> uint16 with round-half-up."""
    d = np.clip(np.asarray(depth, dtype=np.float64), 0.0, 1.0)
    return np.floor(d * DEPTH_LEVELS + 0.5).astype(np.uint16)


def dequantize_depth(raw: np.ndarray) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / DEPTH_LEVELS


def write_depth_png(depth: np.ndarray, path) -> None:
    Image.fromarray(quantize_depth(depth)).save(path)


def read_depth_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.array(im)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read depth PNG {path}: {exc}") from exc
    if arr.ndim != 2 or arr.dtype not in (np.uint16, np.int32, np.uint8):
        raise DataError(f"{path}: expected a 16-bit grayscale PNG, got mode with dtype {arr.dtype} shape {arr.shape}")
    if arr.dtype == np.uint8:
        raise DataError(f"{path}: depth must be 16-bit, found 8-bit")
    return dequantize_depth(arr)


def _palette_bytes() -> List[int]:
    pal = np.zeros((256, 3), dtype=np.uint8)
    pal[: len(PALETTE)] = np.rint(PALETTE * 255).astype(np.uint8)
    return pal.reshape(-1).tolist()


def _paths(directory, index: int) -> Dict[str, Path]:
    d = Path(directory)
    stem = f"{index:05d}"
    return {
        "image": d / f"{stem}_image.png",
        "mask": d / f"{stem}_mask.png",
        "depth": d / f"{stem}_depth.png",
        "meta": d / f"{stem}.json",
    }


def write_sample(sample: Sample, directory, index: int) -> None:
    paths = _paths(directory, index)
    Path(directory).mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(sample.image, dtype=np.uint8), mode="RGB").save(paths["image"])
    mask = Image.fromarray(np.asarray(sample.mask, dtype=np.uint8), mode="P")
    mask.putpalette(_palette_bytes())
    mask.save(paths["mask"])
    write_depth_png(sample.depth, paths["depth"])
    meta = {
        "boxes": [b.to_dict() for b in sample.boxes],
        "intrinsics": sample.intrinsics.to_dict(),
        "depth_scale_mm": sample.depth_scale_mm,
        "has_labels": sample.has_labels,
    }
    paths["meta"].write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def _read_png(path, what: str) -> np.ndarray:
    if not Path(path).is_file():
        raise DataError(f"missing {what} file {path}")
    try:
        with Image.open(path) as im:
            if what == "mask" and im.mode not in ("P", "L"):
                raise DataError(f"{path}: mask must be an 8-bit indexed PNG, got mode {im.mode}")
            return np.array(im.convert("RGB") if what == "image" else im)
    except (OSError, ValueError) as exc:
        raise DataError(f"corrupt {what} file {path}: {exc}") from exc


def read_sample(directory, index: int) -> Sample:
    paths = _paths(directory, index)
    if not paths["meta"].is_file():
        raise DataError(f"missing sidecar file {paths['meta']}")
    try:
        meta = json.loads(paths["meta"].read_text())
        boxes = [Box.from_dict(b) for b in meta["boxes"]]
        intr = Intrinsics.from_dict(meta["intrinsics"])
        scale = float(meta["depth_scale_mm"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"corrupt sidecar file {paths['meta']}: {exc}") from exc
    image = _read_png(paths["image"], "image")
    mask = _read_png(paths["mask"], "mask").astype(np.uint8)
    if not paths["depth"].is_file():
        raise DataError(f"missing depth file {paths['depth']}")
    depth = read_depth_png(paths["depth"])
    if not (image.shape[:2] == mask.shape == depth.shape):
        raise DataError(f"sample {index} in {directory}: image/mask/depth extents disagree")
    return Sample(image, mask, depth, boxes, intr, scale, bool(meta.get("has_labels", True)), name=f"{index:05d}")


# ---------------------------------------------------------------------------
# datasets


def write_dataset(directory, cfg: SceneConfig, splits: SplitSpec = SplitSpec(), base_seed: Optional[int] = None) -> dict:
    """Generate and store a split dataset; returns the manifest."""
    base_seed = cfg.seed if base_seed is None else base_seed
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ranges = splits.ranges()
    total = sum(len(v) for v in ranges.values())
    for i in range(total):
        write_sample(generate_scene(sample_seed(base_seed, i), cfg), directory, i)
    manifest = {
        "format_version": FORMAT_VERSION,
        "base_seed": int(base_seed),
        "num_classes": cfg.num_classes,
        "image_size": list(cfg.image_size),
        "depth_scale_mm": cfg.depth_scale_mm,
        "scene_config": cfg.to_dict(),
        "splits": ranges,
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise DataError(f"missing dataset manifest {path}")
    try:
        manifest = json.loads(path.read_text())
    except ValueError as exc:
        raise DataError(f"corrupt manifest {path}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION or "splits" not in manifest:
        raise DataError(f"{path}: unsupported manifest")
    return manifest


def load_split(directory, split: str) -> List[Sample]:
    manifest = read_manifest(directory)
    if split not in manifest["splits"]:
        raise DataError(f"split {split!r} not in manifest (have {sorted(manifest['splits'])})")
    return [read_sample(directory, i) for i in manifest["splits"][split]]


IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def import_pseudo_depth(
    image_dir,
    depth_dir,
    intrinsics: Optional[Intrinsics] = None,
    depth_scale_mm: float = 150.0,
) -> List[Sample]:
    """Pair RGB frames with externally produced 16-bit depth maps by filename stem.

    Masks and boxes are unknown: they are zero-filled and ``has_labels`` is
    False.  Every unmatched file is reported in a single error.
    """
    images = {p.stem: p for p in sorted(Path(image_dir).iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}
    depths = {p.stem: p for p in sorted(Path(depth_dir).iterdir()) if p.suffix.lower() == ".png"}
    if not images and not depths:
        warnings.warn(f"no images in {image_dir} and no depth maps in {depth_dir}")
        return []
    unmatched = [str(images[s]) for s in sorted(set(images) - set(depths))]
    unmatched += [str(depths[s]) for s in sorted(set(depths) - set(images))]
    if unmatched:
        raise DataError("unmatched files: " + ", ".join(unmatched))
    samples = []
    for stem in sorted(images):
        image = _read_png(images[stem], "image")
        depth = read_depth_png(depths[stem])
        if image.shape[:2] != depth.shape:
            raise DataError(f"{stem}: image {image.shape[:2]} and depth {depth.shape} extents differ")
        H, W = depth.shape
        k = intrinsics or Intrinsics.default(W, H)
        samples.append(
            Sample(image, np.zeros((H, W), np.uint8), depth, [], k, depth_scale_mm, has_labels=False, name=stem)
        )
    return samples

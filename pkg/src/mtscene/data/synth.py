"""Procedural surgical-like scenes with exact masks, depth and boxes.

Instruments are capsules (rounded tubes) entering from the image border,
drawn over a smooth tissue surface.  Depth along each tube varies linearly
along its axis and always lies in front of the tissue.  The scene is lit
from the camera, so brightness falls off with depth; that is the cue the
depth head can learn from.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from ..autodiff import interpolation_matrix
from ..boxes import Box
from ..errors import ConfigError, DataError
from ..recon3d import Intrinsics

MAX_CLASSES = 8  # background + up to seven instrument types

# per-class albedo; index 0 unused (background)
PALETTE = np.array(
    [
        [0.00, 0.00, 0.00],
        [0.78, 0.80, 0.84],
        [0.22, 0.24, 0.28],
        [0.85, 0.72, 0.30],
        [0.35, 0.50, 0.90],
        [0.35, 0.80, 0.45],
        [0.97, 0.97, 0.97],
        [0.62, 0.38, 0.78],
    ]
)
TISSUE = np.array([0.86, 0.36, 0.32])


@dataclass(frozen=True)
class SceneConfig:
    image_size: Tuple[int, int] = (64, 64)  # (H, W)
    num_classes: int = 4
    instruments: Tuple[int, int] = (1, 3)
    tube_width: Tuple[float, float] = (6.0, 10.0)
    tube_length: Tuple[float, float] = (28.0, 56.0)
    texture_octaves: int = 3
    texture_strength: float = 0.1  # albedo modulation amplitude
    background_depth: Tuple[float, float] = (0.55, 0.95)
    instrument_depth: Tuple[float, float] = (0.15, 0.5)
    noise: float = 0.02
    depth_scale_mm: float = 150.0
    min_gap: int = 2
    min_area: int = 40
    max_retries: int = 200
    seed: int = 0

    def __post_init__(self):
        for name in ("image_size", "instruments", "tube_width", "tube_length", "background_depth", "instrument_depth"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not 2 <= self.num_classes <= MAX_CLASSES:
            raise ConfigError(f"num_classes must be in [2, {MAX_CLASSES}], got {self.num_classes}")
        lo, hi = self.instruments
        if lo < 1 or hi < lo:
            raise ConfigError(f"instrument count range {self.instruments} invalid (need 1 <= lo <= hi)")
        for name in ("background_depth", "instrument_depth"):
            a, b = getattr(self, name)
            if not 0.0 < a <= b < 1.0:
                raise ConfigError(f"{name} {getattr(self, name)} must lie within (0, 1)")
        if self.instrument_depth[1] >= self.background_depth[0]:
            raise ConfigError("instrument depths must be strictly nearer than the background")
        if min(self.image_size) < 8 or self.texture_octaves < 1 or self.depth_scale_mm <= 0 or not 0 <= self.texture_strength < 0.85:
            raise ConfigError("invalid image size, texture octaves, texture strength or depth scale")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray  # (H, W) uint8 class labels
    depth: np.ndarray  # (H, W) float64 in [0, 1]
    boxes: List[Box]
    intrinsics: Intrinsics
    depth_scale_mm: float
    has_labels: bool = True
    name: Optional[str] = None

    @property
    def size(self) -> Tuple[int, int]:
        return self.mask.shape


def _smooth_field(rng: np.random.Generator, grid: int, size: Tuple[int, int]) -> np.ndarray:
    H, W = size
    coarse = rng.random((grid, grid))
    return interpolation_matrix(H, grid) @ coarse @ interpolation_matrix(W, grid).T


def _texture(rng, size, octaves: int) -> np.ndarray:
    tex = np.zeros(size)
    norm = 0.0
    for k in range(octaves):
        amp = 0.5**k
        tex += amp * _smooth_field(rng, 8 * 2**k, size)
        norm += amp
    return tex / norm


def _shading(z: np.ndarray) -> np.ndarray:
    # brightness falls off linearly with distance from the camera light and
    # stays below saturation over the whole instrument depth range
    return np.clip(1.15 - z, 0.0, 1.0)


def _segment_geometry(px, py, p0, p1):
    d = p1 - p0
    t = ((px - p0[0]) * d[0] + (py - p0[1]) * d[1]) / float(d @ d)
    t = np.clip(t, 0.0, 1.0)
    dist = np.hypot(px - (p0[0] + t * d[0]), py - (p0[1] + t * d[1]))
    return t, dist


def _propose_tube(rng, cfg: SceneConfig):
    H, W = cfg.image_size
    side = rng.integers(4)
    edge = {0: (rng.uniform(0, W), 0.0), 1: (rng.uniform(0, W), float(H)), 2: (0.0, rng.uniform(0, H)), 3: (float(W), rng.uniform(0, H))}
    p0 = np.array(edge[side])
    target = np.array([rng.uniform(0.25 * W, 0.75 * W), rng.uniform(0.25 * H, 0.75 * H)])
    direction = target - p0
    direction /= np.linalg.norm(direction)
    angle = rng.uniform(-0.5, 0.5)
    c, s = np.cos(angle), np.sin(angle)
    direction = np.array([c * direction[0] - s * direction[1], s * direction[0] + c * direction[1]])
    length = rng.uniform(*cfg.tube_length)
    p1 = p0 + length * direction
    radius = 0.5 * rng.uniform(*cfg.tube_width)
    d0, d1 = rng.uniform(*cfg.instrument_depth, size=2)
    cls = int(rng.integers(1, cfg.num_classes))
    return cls, p0, p1, radius, d0, d1


def generate_scene(seed: int, cfg: SceneConfig = SceneConfig()) -> Sample:
    """Render one scene; a pure function of ``(seed, cfg)``."""
    rng = np.random.default_rng(seed)
    H, W = cfg.image_size
    py, px = np.mgrid[0:H, 0:W] + 0.5

    lo, hi = cfg.background_depth
    field_ = _smooth_field(rng, 3, (H, W))
    field_ = (field_ - field_.min()) / max(np.ptp(field_), 1e-9)
    tilt = rng.uniform(-1, 1, size=2)
    plane = tilt[0] * (px / W - 0.5) + tilt[1] * (py / H - 0.5)
    bg = 0.7 * field_ + 0.3 * (plane - plane.min()) / max(np.ptp(plane), 1e-9)
    bg_depth = lo + (hi - lo) * bg
    texture = _texture(rng, (H, W), cfg.texture_octaves)
    albedo = TISSUE[None, None, :] * (0.85 + cfg.texture_strength * (2.0 * texture[..., None] - 1.0))

    depth = bg_depth.copy()
    mask = np.zeros((H, W), dtype=np.uint8)
    occupied = np.zeros((H, W), dtype=bool)
    shade_extra = np.ones((H, W))
    boxes: List[Box] = []
    count = int(rng.integers(cfg.instruments[0], cfg.instruments[1] + 1))
    struct = np.ones((2 * cfg.min_gap + 1, 2 * cfg.min_gap + 1), dtype=bool)
    for _ in range(count):
        for _attempt in range(cfg.max_retries):
            cls, p0, p1, radius, d0, d1 = _propose_tube(rng, cfg)
            t, dist = _segment_geometry(px, py, p0, p1)
            pixels = dist <= radius
            area = int(pixels.sum())
            if area < cfg.min_area:
                continue
            if np.any(ndimage.binary_dilation(pixels, struct) & occupied):
                continue
            rows, cols = np.nonzero(pixels)
            if rows.max() - rows.min() + 1 < 4 or cols.max() - cols.min() + 1 < 4:
                continue
            break
        else:
            raise DataError(f"could not place {count} non-overlapping instruments after {cfg.max_retries} retries")
        occupied |= pixels
        mask[pixels] = cls
        depth[pixels] = d0 + t[pixels] * (d1 - d0)
        # cylindrical highlight across the tube
        shade_extra[pixels] = 1.0 - 0.2 * (dist[pixels] / radius) ** 2
        albedo[pixels] = PALETTE[cls]
        boxes.append(Box(cls, float(cols.min()), float(rows.min()), float(cols.max() + 1), float(rows.max() + 1)))

    img = albedo * (_shading(depth) * shade_extra)[..., None]
    img = img + rng.normal(0.0, cfg.noise, size=img.shape)
    image = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return Sample(
        image=image,
        mask=mask,
        depth=depth,
        boxes=boxes,
        intrinsics=Intrinsics.default(W, H),
        depth_scale_mm=cfg.depth_scale_mm,
    )


def sample_seed(base_seed: int, index: int) -> int:
    """Independent per-sample seed derived from (base seed, index)."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def generate_dataset(base_seed: int, cfg: SceneConfig, n: int) -> List[Sample]:
    return [generate_scene(sample_seed(base_seed, i), cfg) for i in range(n)]


@dataclass
class SplitSpec:
    train: int = 200
    val: int = 40
    test: int = 40

    def ranges(self) -> dict:
        a, b = self.train, self.train + self.val
        return {"train": list(range(0, a)), "val": list(range(a, b)), "test": list(range(b, b + self.test))}

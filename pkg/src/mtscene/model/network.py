"""Staged attention encoder, quarter-resolution fusion decoder and task heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff import Tensor, concat, gelu, sigmoid, upsample_bilinear
from ..detection import DetectionGrid
from ..errors import ConfigError, ShapeError
from .layers import Block, ConvHead, LayerNorm, Linear, Module, OverlapPatchEmbed, map_to_tokens, tokens_to_map


@dataclass(frozen=True)
class StageConfig:
    patch_size: int
    stride: int
    embed_dim: int
    depth: int
    num_heads: int


DEFAULT_STAGES = (
    StageConfig(7, 4, 16, 2, 1),
    StageConfig(3, 2, 32, 2, 2),
    StageConfig(3, 2, 64, 2, 4),
)


@dataclass(frozen=True)
class EncoderConfig:
    stages: Tuple[StageConfig, ...] = DEFAULT_STAGES
    drop_path_max: float = 0.1
    mlp_ratio: int = 4
    in_channels: int = 3

    def __post_init__(self):
        stages = tuple(s if isinstance(s, StageConfig) else StageConfig(**s) for s in self.stages)
        object.__setattr__(self, "stages", stages)
        if not stages:
            raise ConfigError("encoder needs at least one stage")
        dims = [s.embed_dim for s in stages]
        if any(b < a for a, b in zip(dims, dims[1:])):
            raise ConfigError(f"stage dims must be non-decreasing, got {dims}")
        if not 0.0 <= self.drop_path_max < 1.0:
            raise ConfigError("drop_path_max must lie in [0, 1)")
        for s in stages:
            if min(s.patch_size, s.stride, s.embed_dim, s.depth, s.num_heads) < 1 or s.embed_dim % s.num_heads:
                raise ConfigError(f"invalid stage {s}")

    @property
    def downsampling(self) -> int:
        return int(np.prod([s.stride for s in self.stages]))

    def drop_probs(self) -> List[float]:
        """Per-block drop path probability, linear from 0 to drop_path_max over all blocks."""
        total = sum(s.depth for s in self.stages)
        return list(np.linspace(0.0, self.drop_path_max, total)) if total > 1 else [0.0] * total


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder_dim: int = 64
    head_hidden: int = 32
    # full-resolution depth refinement width (image + upsampled guide channels); 0 disables
    refine_dim: int = 16
    refine_guides: int = 8
    num_classes: int = 4  # background + instrument classes
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            object.__setattr__(self, "encoder", EncoderConfig(**self.encoder))
        if self.refine_dim < 0 or self.refine_guides < 0:
            raise ConfigError("refine_dim and refine_guides must be non-negative")
        if self.num_classes < 2:
            raise ConfigError("num_classes must include background and at least one instrument class")

    @property
    def num_det_classes(self) -> int:
        return self.num_classes - 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        enc = dict(d.pop("encoder", {}))
        if "stages" in enc:
            enc["stages"] = tuple(StageConfig(**s) if isinstance(s, dict) else s for s in enc["stages"])
        return cls(encoder=EncoderConfig(**enc), **d)


@dataclass
class Predictions:
    seg_logits: Tensor  # (B, C, H, W)
    depth: Tensor  # (B, H, W), in (0, 1)
    det_grid: DetectionGrid


class Encoder(Module):
    def __init__(self, rng, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        probs = iter(cfg.drop_probs())
        c_in = cfg.in_channels
        self.stages = []
        for i, s in enumerate(cfg.stages):
            embed = self.child(f"stage{i}.embed", OverlapPatchEmbed(rng, c_in, s.embed_dim, s.patch_size, s.stride))
            blocks = [
                self.child(f"stage{i}.block{j}", Block(rng, s.embed_dim, s.num_heads, cfg.mlp_ratio, next(probs)))
                for j in range(s.depth)
            ]
            norm = self.child(f"stage{i}.norm", LayerNorm(s.embed_dim))
            self.stages.append((embed, blocks, norm))
            c_in = s.embed_dim

    def __call__(self, x, training: bool = False, rng=None) -> List[Tensor]:
        H, W = x.shape[-2:]
        f = self.cfg.downsampling
        if H % f or W % f:
            raise ShapeError(f"encoder: image extents {H}x{W} must be divisible by {f}")
        features = []
        for embed, blocks, norm in self.stages:
            tokens, hw = embed(x)
            for block in blocks:
                tokens = block(tokens, hw, training, rng)
            x = tokens_to_map(norm(tokens), hw)
            features.append(x)
        return features


class Decoder(Module):
    """Project every stage to ``dim`` channels, resize to quarter resolution, fuse."""

    def __init__(self, rng, stage_dims: Sequence[int], dim: int):
        super().__init__()
        self.proj = [self.child(f"proj{i}", Linear(rng, c, dim)) for i, c in enumerate(stage_dims)]
        self.fuse = self.child("fuse", Linear(rng, dim * len(stage_dims), dim)) if len(stage_dims) > 1 else None
        self.dim = dim

    def __call__(self, features: Sequence[Tensor], out_hw: Tuple[int, int]) -> Tensor:
        if not features:
            raise ShapeError("decoder: empty feature sequence")
        maps = []
        for proj, f in zip(self.proj, features):
            y = tokens_to_map(proj(map_to_tokens(f)), f.shape[-2:])
            if y.shape[-2:] != tuple(out_hw):
                y = upsample_bilinear(y, out_hw)
            maps.append(y)
        if self.fuse is None:
            return maps[0]
        fused = self.fuse(map_to_tokens(concat(maps, axis=1)))
        return tokens_to_map(gelu(fused), out_hw)


class MultiTaskNet(Module):
    """Shared encoder/decoder with segmentation, depth and detection heads."""

    det_stride = 4

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        enc = cfg.encoder
        self.encoder = self.child("encoder", Encoder(rng, enc))
        self.decoder = self.child("decoder", Decoder(rng, [s.embed_dim for s in enc.stages], cfg.decoder_dim))
        self.seg_head = self.child("seg_head", ConvHead(rng, cfg.decoder_dim, cfg.head_hidden, cfg.num_classes))
        guides = cfg.refine_guides if cfg.refine_dim else 0
        self.depth_head = self.child("depth_head", ConvHead(rng, cfg.decoder_dim, cfg.head_hidden, 1 + guides))
        self.depth_refine = None
        if cfg.refine_dim:
            c_in = enc.in_channels + guides
            self.depth_refine = self.child("depth_refine", ConvHead(rng, c_in, cfg.refine_dim, 1, out_kernel=3))
        self.det_head = self.child("det_head", ConvHead(rng, cfg.decoder_dim, cfg.head_hidden, 1 + cfg.num_det_classes + 4))
        # objectness prior of ~1% so the many empty cells start near their target
        self.det_head.out.bias.data[0] = -4.6

    def shared_parameters(self):
        return [t for n, t in self.named_parameters() if n.startswith(("encoder.", "decoder."))]

    def features(self, images, training: bool = False, rng=None) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(images)
        if x.ndim != 4 or x.shape[1] != self.cfg.encoder.in_channels:
            raise ShapeError(f"expected images (B, {self.cfg.encoder.in_channels}, H, W), got {x.shape}")
        H, W = x.shape[-2:]
        if H % 4 or W % 4:
            raise ShapeError(f"image extents {H}x{W} must be divisible by 4")
        feats = self.encoder(x, training, rng)
        return self.decoder(feats, (H // 4, W // 4))

    def heads(self, fused: Tensor, images: Tensor) -> Predictions:
        image_hw = images.shape[-2:]
        seg = upsample_bilinear(self.seg_head(fused), image_hw)
        coarse = upsample_bilinear(self.depth_head(fused), image_hw)
        depth_logit = coarse[:, 0:1]
        if self.depth_refine is not None:
            # sharpen thin structures the quarter-resolution head cannot resolve
            depth_logit = depth_logit + self.depth_refine(concat([images, coarse[:, 1:]], axis=1))
        depth = sigmoid(depth_logit.reshape(depth_logit.shape[0], *image_hw))
        det = self.det_head(fused)
        nc = self.cfg.num_det_classes
        grid = DetectionGrid(
            objectness=det[:, 0],
            class_logits=det[:, 1 : 1 + nc],
            box_raw=det[:, 1 + nc : 5 + nc],
            stride=self.det_stride,
        )
        return Predictions(seg, depth, grid)

    def __call__(self, images, training: bool = False, rng=None) -> Predictions:
        x = images if isinstance(images, Tensor) else Tensor(images)
        fused = self.features(x, training, rng)
        return self.heads(fused, x)

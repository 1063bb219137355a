"""Finite-difference checks for every loss and for the full model loss."""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from ..autodiff import Tensor, grad_check, no_grad
from ..boxes import Box
from ..detection import DetectionGrid, match_batch
from ..losses import (
    DepthLossConfig,
    SegLossConfig,
    depth_loss,
    detection_loss,
    seg_loss,
    sobel_edge_loss,
    ssim,
    total_loss,
)
from ..model import EncoderConfig, ModelConfig, MultiTaskNet, StageConfig

LOSS_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3
# gradients below this magnitude are compared absolutely in the end-to-end check
GRAD_FLOOR = 1e-8
# five-point stencil step; residuals in the test points stay >= 0.02 from any kink
FD_STEP = 1e-4

_TOY_BOXES = [
    [Box(1, 2.0, 3.0, 14.0, 11.0), Box(2, 17.0, 18.0, 30.0, 29.0)],
    [Box(3, 5.0, 20.0, 27.0, 27.0)],
]


def _det_targets(h: int, w: int, stride: int):
    return match_batch(_TOY_BOXES, (h, w), stride)


def loss_checks(seed: int = 0) -> Dict[str, float]:
    """Max relative gradient error per loss on random float64 inputs."""
    rng = np.random.default_rng(seed)
    B, C, H, W = 2, 4, 12, 12
    target = rng.integers(0, C, size=(B, H, W))
    seg_cfg = SegLossConfig(num_classes=C)
    bin_cfg = SegLossConfig(num_classes=2, binary_mode=True)
    bin_target = rng.integers(0, 2, size=(B, H, W))
    depth_target = rng.uniform(0.1, 0.9, size=(B, H, W))
    dcfg = DepthLossConfig()
    ssim_only = DepthLossConfig(w_ssim=1.0, w_edge=0.0, w_mae=0.0)
    mae_only = DepthLossConfig(w_ssim=0.0, w_edge=0.0, w_mae=1.0)
    h = w = 8
    stride = 4
    targets = _det_targets(h, w, stride)

    def det_point():
        return {
            "obj": rng.normal(size=(B, h, w)),
            "cls": rng.normal(size=(B, 3, h, w)),
            "box": rng.normal(scale=0.5, size=(B, 4, h, w)),
        }

    def det_fn(t):
        return detection_loss(DetectionGrid(t["obj"], t["cls"], t["box"], stride), targets)[0]

    cases = {
        "seg_ce_miou": (
            lambda t: seg_loss(t["x"], target, seg_cfg)[0],
            {"x": rng.normal(size=(B, C, H, W))},
        ),
        "seg_bce_miou": (
            lambda t: seg_loss(t["x"], bin_target, bin_cfg)[0],
            {"x": rng.normal(size=(B, 1, H, W))},
        ),
        "depth_ssim": (
            lambda t: 1.0 - ssim(t["d"], depth_target, ssim_only),
            {"d": rng.uniform(0.1, 0.9, size=(B, H, W))},
        ),
        "depth_edge": (
            lambda t: sobel_edge_loss(t["d"], depth_target),
            {"d": rng.uniform(0.1, 0.9, size=(B, H, W))},
        ),
        "depth_mae": (
            lambda t: depth_loss(t["d"], depth_target, mae_only)[0],
            # keep residuals away from the kink at zero
            {"d": np.clip(depth_target + rng.choice([-1, 1], size=(B, H, W)) * rng.uniform(0.02, 0.08, (B, H, W)), 0, 1)},
        ),
        "depth_total": (
            lambda t: depth_loss(t["d"], depth_target, dcfg)[0],
            {"d": np.clip(depth_target + rng.choice([-1, 1], size=(B, H, W)) * rng.uniform(0.02, 0.08, (B, H, W)), 0, 1)},
        ),
        "detection": (det_fn, det_point()),
    }
    errors = {name: grad_check(fn, point, step=FD_STEP, order=4) for name, (fn, point) in cases.items()}

    task_w = rng.dirichlet(np.ones(3))
    dpt = np.clip(depth_target + rng.choice([-1, 1], size=(B, H, W)) * rng.uniform(0.02, 0.08, (B, H, W)), 0, 1)

    def weighted(t):
        s = seg_loss(t["x"], target, seg_cfg)[0]
        d = depth_loss(t["d"], depth_target, dcfg)[0]
        k = det_fn(t)
        return total_loss(s, d, k, task_w).tensor

    point = {"x": rng.normal(size=(B, C, H, W)), "d": dpt, **det_point()}
    errors["weighted_total"] = grad_check(weighted, point, step=FD_STEP, order=4)
    return errors


def toy_model_config(seed: int = 0) -> ModelConfig:
    """A tiny network for end-to-end checks on 32x32 inputs."""
    stages = (StageConfig(7, 4, 8, 1, 1), StageConfig(3, 2, 16, 1, 2))
    return ModelConfig(EncoderConfig(stages=stages, drop_path_max=0.0), decoder_dim=16, head_hidden=8, seed=seed)


def model_check(
    seed: int = 0,
    coords: int = 200,
    step: float = FD_STEP,
    model_cfg: Optional[ModelConfig] = None,
    image_size: int = 32,
    floor: float = GRAD_FLOOR,
) -> float:
    """Relative error of d(total loss)/d(parameters) on ``coords`` sampled parameters.

    Stochastic gates are off (evaluation-mode forward) so the loss is a
    deterministic function of the parameters.  The numeric derivative uses
    the fourth-order five-point stencil; the relative error denominator is
    floored at ``floor`` so exactly-zero gradients compare absolutely.
    """
    rng = np.random.default_rng(seed)
    cfg = model_cfg or toy_model_config(seed)
    model = MultiTaskNet(cfg)
    B = 2
    S = image_size
    images = rng.normal(size=(B, 3, S, S))
    masks = rng.integers(0, cfg.num_classes, size=(B, S, S))
    depths = rng.uniform(0.1, 0.9, size=(B, S, S))
    weights = np.array([0.5, 0.3, 0.2])
    seg_cfg = SegLossConfig(num_classes=cfg.num_classes)
    boxes = [[b for b in bs if b.x1 <= S and b.y1 <= S] for bs in _TOY_BOXES]

    def loss():
        p = model(images, training=False)
        seg = seg_loss(p.seg_logits, masks, seg_cfg)[0]
        dep = depth_loss(p.depth, depths)[0]
        matched = match_batch(boxes, p.det_grid.extents, p.det_grid.stride)
        det = detection_loss(p.det_grid, matched)[0]
        return total_loss(seg, dep, det, weights).tensor

    out = loss()
    out.backward()
    named = list(model.named_parameters())
    flat = [(i, j) for i, (_, t) in enumerate(named) for j in range(t.size)]
    pick = rng.choice(len(flat), size=min(coords, len(flat)), replace=False)
    worst = 0.0
    with no_grad():
        for k in sorted(pick):
            i, j = flat[k]
            t = named[i][1]
            view = t.data.reshape(-1)
            orig = view[j]
            f = {}
            for m in (-2, -1, 1, 2):
                view[j] = orig + m * step
                f[m] = loss().item()
            view[j] = orig
            numeric = (8.0 * (f[1] - f[-1]) - (f[2] - f[-2])) / (12.0 * step)
            analytic = t.grad.reshape(-1)[j]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, err)
    return worst


def run_all(seed: int = 0, coords: int = 200) -> Dict[str, float]:
    errors = loss_checks(seed)
    errors["model_end_to_end"] = model_check(seed, coords)
    return errors


def passed(errors: Dict[str, float]) -> bool:
    return all(v < (MODEL_TOLERANCE if k == "model_end_to_end" else LOSS_TOLERANCE) for k, v in errors.items())

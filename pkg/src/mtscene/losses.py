"""Segmentation, depth and detection losses and their weighted total.

All losses take :class:`~mtscene.autodiff.Tensor` predictions and numpy
targets and return a differentiable scalar plus a dict of float
components.  Inputs may carry a leading batch axis; reductions then run
over the whole batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .autodiff import (
    Tensor,
    as_tensor,
    avg_pool2d,
    concat,
    conv2d,
    getitem,
    log_sigmoid,
    log_softmax,
    sigmoid,
    smooth_l1,
    softmax,
    sqrt,
    tabs,
)
from .detection import DetectionGrid, MatchedTargets
from .errors import ConfigError, DataError, NumericalError, ShapeError

TASKS = ("seg", "depth", "detection")


@dataclass(frozen=True)
class SegLossConfig:
    alpha: float = 0.5
    beta: float = 0.5
    num_classes: int = 4
    binary_mode: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ConfigError(f"need alpha, beta >= 0 with a positive sum, got {self.alpha}, {self.beta}")
        if self.num_classes < 1 or (self.binary_mode and self.num_classes != 2):
            raise ConfigError(f"invalid num_classes={self.num_classes} (binary mode needs 2)")


@dataclass(frozen=True)
class DepthLossConfig:
    w_ssim: float = 0.5
    w_edge: float = 0.25
    w_mae: float = 0.25
    ssim_window: int = 7
    ssim_c1: float = 0.01**2
    ssim_c2: float = 0.03**2

    def __post_init__(self):
        if min(self.w_ssim, self.w_edge, self.w_mae) < 0:
            raise ConfigError("depth loss weights must be non-negative")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ConfigError(f"ssim_window must be a positive odd integer, got {self.ssim_window}")


@dataclass
class LossBreakdown:
    total: float
    seg: float
    depth: float
    detection: float
    weights: Tuple[float, float, float]
    components: Dict[str, float] = field(default_factory=dict)
    tensor: Optional[Tensor] = field(default=None, repr=False, compare=False)

    def as_row(self) -> Dict[str, float]:
        row = {"total": self.total, "seg": self.seg, "depth": self.depth, "detection": self.detection}
        row.update(self.components)
        return row


# ---------------------------------------------------------------------------
# segmentation


def _onehot(target: np.ndarray, num_classes: int) -> np.ndarray:
    """(…, H, W) labels -> (…, C, H, W) one-hot floats."""
    eye = np.eye(num_classes)[target]  # (..., H, W, C)
    return np.moveaxis(eye, -1, -3)


def soft_miou(probs: Tensor, onehot: np.ndarray) -> Tensor:
    """Mean soft IoU over the classes present in ``onehot`` (channel axis -3)."""
    axes = tuple(i for i in range(probs.ndim) if i != probs.ndim - 3)
    inter = (probs * onehot).sum(axis=axes)
    union = (probs + onehot - probs * onehot).sum(axis=axes)
    present = onehot.sum(axis=axes) > 0
    idx = np.nonzero(present)[0]
    return (getitem(inter, idx) / getitem(union, idx)).mean()


def seg_loss(logits, target, cfg: SegLossConfig) -> Tuple[Tensor, Dict[str, float]]:
    """alpha * CE (or BCE) + beta * (1 - soft mIoU)."""
    logits = as_tensor(logits)
    target = np.asarray(target)
    if target.size == 0:
        raise DataError("seg_loss: empty target map")
    channels = 1 if cfg.binary_mode else cfg.num_classes
    if logits.ndim < 3 or logits.shape[-3] != channels or logits.shape[-2:] != target.shape[-2:]:
        raise ShapeError(f"seg_loss: logits {logits.shape} do not match target {target.shape} with {channels} channels")
    if target.min() < 0 or target.max() >= cfg.num_classes:
        raise DataError(f"seg_loss: target labels must lie in [0, {cfg.num_classes})")
    target = target.astype(np.intp)
    if cfg.binary_mode:
        x = getitem(logits, (Ellipsis, 0, slice(None), slice(None)))
        y = (target > 0).astype(np.float64)
        ce = -(log_sigmoid(x) * y + log_sigmoid(-x) * (1.0 - y)).mean()
        p = sigmoid(x)
        p_fg = p.reshape(p.shape[:-2] + (1,) + p.shape[-2:])
        probs = _stack_channels(1.0 - p_fg, p_fg)
        onehot = _onehot((target > 0).astype(np.intp), 2)
    else:
        onehot = _onehot(target, cfg.num_classes)
        logp = log_softmax(logits, axis=-3)
        pixels = target.size
        ce = -(logp * onehot).sum() / pixels
        probs = softmax(logits, axis=-3)
    miou = soft_miou(probs, onehot)
    loss = ce * cfg.alpha + (1.0 - miou) * cfg.beta
    return loss, {"ce_or_bce": ce.item(), "miou_term": 1.0 - miou.item()}


def _stack_channels(a: Tensor, b: Tensor) -> Tensor:
    return concat([a, b], axis=-3)


def miou_hard(pred, target, num_classes: int) -> float:
    """Mean IoU over classes present in either map."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"miou_hard: shapes differ {pred.shape} vs {target.shape}")
    ious = []
    for c in range(num_classes):
        p, t = pred == c, target == c
        union = np.count_nonzero(p | t)
        if union:
            ious.append(np.count_nonzero(p & t) / union)
    if not ious:
        raise DataError("miou_hard: no class present in either map")
    return float(np.mean(ious))


# ---------------------------------------------------------------------------
# depth

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()
SOBEL_EPS = 1e-12


def _as_maps(x) -> Tensor:
    """(H, W) or (B, H, W) -> (B, 1, H, W)."""
    x = as_tensor(x)
    if x.ndim == 2:
        return x.reshape(1, 1, *x.shape)
    if x.ndim == 3:
        return x.reshape(x.shape[0], 1, *x.shape[1:])
    if x.ndim == 4 and x.shape[1] == 1:
        return x
    raise ShapeError(f"expected depth maps (H, W) or (B, H, W), got {x.shape}")


def ssim(a, b, cfg: DepthLossConfig = DepthLossConfig()) -> Tensor:
    """Mean SSIM over all valid ``ssim_window`` x ``ssim_window`` uniform windows."""
    a, b = _as_maps(a), _as_maps(b)
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes differ {a.shape} vs {b.shape}")
    k = cfg.ssim_window
    if k > a.shape[-1] or k > a.shape[-2]:
        raise ShapeError(f"ssim: window {k} larger than map {a.shape[-2:]}")
    c1, c2 = cfg.ssim_c1, cfg.ssim_c2
    mu_a, mu_b = avg_pool2d(a, k), avg_pool2d(b, k)
    var_a = avg_pool2d(a * a, k) - mu_a * mu_a
    var_b = avg_pool2d(b * b, k) - mu_b * mu_b
    cov = avg_pool2d(a * b, k) - mu_a * mu_b
    num = (mu_a * mu_b * 2.0 + c1) * (cov * 2.0 + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return (num / den).mean()


def sobel_magnitude(x) -> Tensor:
    """sqrt(gx^2 + gy^2 + eps) over valid 3x3 windows, shape (B, 1, H-2, W-2)."""
    x = _as_maps(x)
    if x.shape[-1] < 3 or x.shape[-2] < 3:
        raise ShapeError(f"sobel: map {x.shape[-2:]} smaller than 3x3")
    gx = conv2d(x, SOBEL_X.reshape(1, 1, 3, 3))
    gy = conv2d(x, SOBEL_Y.reshape(1, 1, 3, 3))
    return sqrt(gx * gx + gy * gy + SOBEL_EPS)


def sobel_edge_loss(pred, target) -> Tensor:
    """Mean |S(pred) - S(target)| of Sobel gradient magnitudes."""
    sp, st = sobel_magnitude(pred), sobel_magnitude(target)
    if sp.shape != st.shape:
        raise ShapeError(f"sobel_edge_loss: shapes differ {sp.shape} vs {st.shape}")
    return tabs(sp - st).mean()


def depth_loss(pred, target, cfg: DepthLossConfig = DepthLossConfig()) -> Tuple[Tensor, Dict[str, float]]:
    pred, target = as_tensor(pred), as_tensor(target)
    if not (np.all(np.isfinite(pred.data)) and np.all(np.isfinite(target.data))):
        raise NumericalError("depth_loss: non-finite depth values")
    if pred.shape != target.shape:
        raise ShapeError(f"depth_loss: shapes differ {pred.shape} vs {target.shape}")
    s = ssim(pred, target, cfg)
    edge = sobel_edge_loss(pred, target)
    mae = tabs(pred - target).mean()
    loss = (1.0 - s) * cfg.w_ssim + edge * cfg.w_edge + mae * cfg.w_mae
    return loss, {"ssim": 1.0 - s.item(), "edge": edge.item(), "mae": mae.item()}


# ---------------------------------------------------------------------------
# detection


def detection_loss(grid: DetectionGrid, targets: MatchedTargets) -> Tuple[Tensor, Dict[str, float]]:
    """SmoothL1 on matched log-distances + class CE on matched cells + objectness CE on all cells.

    Objectness binary cross-entropy is summed over cells and normalised by
    the number of matched cells (at least one).
    """
    obj = grid.objectness
    if obj.shape != targets.positive.shape:
        raise ShapeError(f"detection_loss: grid {obj.shape} vs targets {targets.positive.shape}")
    y = targets.positive.astype(np.float64)
    n = targets.count
    obj_ce = -(log_sigmoid(obj) * y + log_sigmoid(-obj) * (1.0 - y)).sum() / max(n, 1)
    if n == 0:
        return obj_ce, {"smooth_l1": 0.0, "det_ce": obj_ce.item(), "cls_ce": 0.0, "obj_ce": obj_ce.item()}
    b, r, c = targets.cells.T
    # (B, C, h, w) -> per matched cell rows
    cls_logits = getitem(grid.class_logits.transpose(0, 2, 3, 1), (b, r, c))  # (n, Cd)
    if targets.classes.max() >= cls_logits.shape[1]:
        raise DataError("detection_loss: target class outside the head's class range")
    cls_onehot = np.eye(cls_logits.shape[1])[targets.classes]
    cls_ce = -(log_softmax(cls_logits, axis=-1) * cls_onehot).sum() / n
    raw = getitem(grid.box_raw.transpose(0, 2, 3, 1), (b, r, c))  # (n, 4)
    residual = raw - np.log(targets.ltrb / targets.stride)
    reg = smooth_l1(residual).mean()
    det_ce = cls_ce + obj_ce
    loss = reg + det_ce
    return loss, {
        "smooth_l1": reg.item(),
        "det_ce": det_ce.item(),
        "cls_ce": cls_ce.item(),
        "obj_ce": obj_ce.item(),
    }


# ---------------------------------------------------------------------------
# total


def total_loss(
    seg,
    depth,
    detection,
    weights: Sequence[float],
    components: Optional[Mapping[str, float]] = None,
) -> LossBreakdown:
    """Weighted sum ``w1 * seg + w2 * depth + w3 * detection``.

    Task losses may be floats or Tensors; the differentiable total is kept on
    ``LossBreakdown.tensor`` when any of them is a Tensor.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (3,):
        raise ConfigError(f"expected 3 task weights, got {w.shape}")
    losses = [as_tensor(x) for x in (seg, depth, detection)]
    total = losses[0] * w[0] + losses[1] * w[1] + losses[2] * w[2]
    values = [x.item() for x in losses]
    return LossBreakdown(
        total=total.item(),
        seg=values[0],
        depth=values[1],
        detection=values[2],
        weights=tuple(float(v) for v in w),
        components=dict(components or {}),
        tensor=total,
    )

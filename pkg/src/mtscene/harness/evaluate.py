"""Batched inference and split evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ..autodiff import no_grad
from ..boxes import Detection
from ..data.synth import Sample
from ..detection import decode_detections, grid_from_targets, match_batch
from ..errors import DataError
from ..losses import depth_loss, detection_loss, seg_loss
from ..metrics import EvalReport, evaluate_predictions
from ..model import MultiTaskNet
from .checkpoint import Checkpoint, check_compatible, load
from .config import TrainConfig
from .validation import check_samples, images_to_array

EVAL_BATCH = 16


@dataclass
class Prediction:
    mask: np.ndarray  # (H, W) uint8
    depth: np.ndarray  # (H, W) normalized
    detections: List[Detection]
    seg_probs: Optional[np.ndarray] = None


def predict(
    model: MultiTaskNet,
    images,
    objectness_threshold: float = 0.05,
    nms_iou: float = 0.5,
    batch_size: int = EVAL_BATCH,
) -> List[Prediction]:
    x = images_to_array(images)
    out: List[Prediction] = []
    with no_grad():
        for start in range(0, len(x), batch_size):
            p = model(x[start : start + batch_size], training=False)
            seg = p.seg_logits.data
            masks = seg.argmax(axis=1).astype(np.uint8)
            for i in range(seg.shape[0]):
                dets = decode_detections(p.det_grid, objectness_threshold, nms_iou, batch_index=i)
                out.append(Prediction(masks[i], p.depth.data[i].copy(), dets))
    return out


def validation_loss(model: MultiTaskNet, samples: Sequence[Sample], cfg: TrainConfig) -> dict:
    """Per-task mean losses over a split and their uniform-weighted total."""
    sums = np.zeros(3)
    n = 0
    with no_grad():
        for start in range(0, len(samples), EVAL_BATCH):
            chunk = samples[start : start + EVAL_BATCH]
            x = images_to_array(chunk)
            p = model(x, training=False)
            masks = np.stack([s.mask for s in chunk]).astype(np.int64)
            depths = np.stack([s.depth for s in chunk])
            seg, _ = seg_loss(p.seg_logits, masks, cfg.seg_loss)
            dep, _ = depth_loss(p.depth, depths, cfg.depth_loss)
            matched = match_batch([s.boxes for s in chunk], p.det_grid.extents, p.det_grid.stride)
            det, _ = detection_loss(p.det_grid, matched)
            sums += len(chunk) * np.array([seg.item(), dep.item(), det.item()])
            n += len(chunk)
    seg, dep, det = sums / n
    return {"seg": seg, "depth": dep, "detection": det, "total": (seg + dep + det) / 3.0}


def evaluate_model(
    model: MultiTaskNet,
    samples: Sequence[Sample],
    num_classes: int,
    objectness_threshold: float = 0.05,
    nms_iou: float = 0.5,
) -> EvalReport:
    samples = check_samples(samples)
    preds = predict(model, samples, objectness_threshold, nms_iou)
    return evaluate_predictions(
        [p.mask for p in preds],
        [p.depth for p in preds],
        [p.detections for p in preds],
        samples,
        num_classes,
    )


def evaluate_ground_truth(samples: Sequence[Sample], num_classes: int, stride: int = MultiTaskNet.det_stride) -> EvalReport:
    """Score the labels against themselves, routing boxes through the detection encoding."""
    samples = check_samples(samples)
    dets = []
    for s in samples:
        matched = match_batch([s.boxes], (s.mask.shape[0] // stride, s.mask.shape[1] // stride), stride)
        dets.append(decode_detections(grid_from_targets(matched, num_classes - 1)))
    return evaluate_predictions([s.mask for s in samples], [s.depth for s in samples], dets, samples, num_classes)


def evaluate(checkpoint, samples: Sequence[Sample], config: Optional[TrainConfig] = None) -> EvalReport:
    """Load a checkpoint (path or :class:`Checkpoint`) and score it on ``samples``."""
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load(checkpoint)
    if config is not None:
        check_compatible(ckpt, config)
    if not samples:
        raise DataError("cannot evaluate an empty split")
    cfg = ckpt.config
    model = ckpt.build_model()
    return evaluate_model(model, samples, cfg.model.num_classes, cfg.objectness_threshold, cfg.nms_iou)

"""Evaluation metrics: Dice, mIoU, AP/mAP at a fixed IoU, depth MAE in millimetres."""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Dict, Sequence

import numpy as np

from .boxes import Box, Detection, iou_box
from .errors import ShapeError
from .losses import miou_hard

__all__ = [
    "EvalReport",
    "average_precision",
    "average_precision_multi",
    "depth_mae_mm",
    "dice",
    "iou_box",
    "mean_average_precision",
    "miou_hard",
]


def dice(pred, target) -> float:
    """2|A and B| / (|A| + |B|) on boolean masks; 1.0 when both are empty."""
    a, b = np.asarray(pred, dtype=bool), np.asarray(target, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"dice: shapes differ {a.shape} vs {b.shape}")
    total = np.count_nonzero(a) + np.count_nonzero(b)
    if total == 0:
        return 1.0
    return 2.0 * np.count_nonzero(a & b) / total


def depth_mae_mm(pred, target, scale_mm: float) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"depth_mae_mm: shapes differ {pred.shape} vs {target.shape}")
    if not scale_mm > 0:
        raise ValueError("scale_mm must be positive")
    return float(np.mean(np.abs(pred - target)) * scale_mm)


def average_precision_multi(
    detections: Sequence[Sequence[Detection]],
    ground_truth: Sequence[Sequence[Box]],
    iou_threshold: float = 0.5,
) -> float:
    """All-point interpolated AP of one class over several images.

    Detections are ranked by score across all images (ties keep input order);
    each detection greedily takes the best-overlapping unmatched ground truth
    of its own image with IoU >= ``iou_threshold``.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must lie in (0, 1)")
    if len(detections) != len(ground_truth):
        raise ShapeError("detections and ground truth must cover the same images")
    n_gt = sum(len(g) for g in ground_truth)
    if n_gt == 0:
        return 0.0
    ranked = sorted(
        ((d.score, img, k, d) for img, dets in enumerate(detections) for k, d in enumerate(dets)),
        key=lambda r: -r[0],
    )
    matched = [[False] * len(g) for g in ground_truth]
    tp = np.zeros(len(ranked))
    for i, (_, img, _, det) in enumerate(ranked):
        gts = ground_truth[img]
        best, best_iou = -1, iou_threshold
        for j, g in enumerate(gts):
            if not matched[img][j]:
                iou = iou_box(det, g)
                if iou >= best_iou:
                    best, best_iou = j, iou
        if best >= 0:
            matched[img][best] = True
            tp[i] = 1.0
    if not len(ranked):
        return 0.0
    # precision and recall are ratios of counts, so the area is summed exactly
    # and rounded once; the result does not depend on summation order
    ctp = np.cumsum(tp).astype(int)
    precision = [Fraction(int(c), k) for k, c in enumerate(ctp, start=1)]
    envelope = list(itertools.accumulate(reversed(precision), max))[::-1]
    # recall rises by 1/n_gt exactly at each true positive
    area = sum((env for env, hit in zip(envelope, tp) if hit), Fraction(0))
    return float(area / n_gt)


def average_precision(detections: Sequence[Detection], ground_truth: Sequence[Box], iou_threshold: float = 0.5) -> float:
    """AP for a single image; class labels are ignored (filter beforehand)."""
    return average_precision_multi([detections], [ground_truth], iou_threshold)


def mean_average_precision(
    detections: Sequence[Sequence[Detection]],
    ground_truth: Sequence[Sequence[Box]],
    iou_threshold: float = 0.5,
) -> tuple:
    """(mAP over classes present in the ground truth, per-class AP dict)."""
    classes = sorted({b.cls for g in ground_truth for b in g} | {d.cls for ds in detections for d in ds})
    per_class = {}
    for c in classes:
        dets = [[d for d in ds if d.cls == c] for ds in detections]
        gts = [[b for b in g if b.cls == c] for g in ground_truth]
        per_class[c] = average_precision_multi(dets, gts, iou_threshold)
    present = sorted({b.cls for g in ground_truth for b in g})
    m = float(np.mean([per_class[c] for c in present])) if present else 0.0
    return m, per_class


@dataclass
class EvalReport:
    dice: float
    miou: float
    map50: float
    depth_mae_mm: float
    per_class_ap: Dict[int, float] = field(default_factory=dict)
    per_class_dice: Dict[int, float] = field(default_factory=dict)
    images: int = 0
    instances: int = 0

    @property
    def score(self) -> float:
        return 0.5 * (self.dice + self.map50)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class_ap"] = {str(k): v for k, v in self.per_class_ap.items()}
        d["per_class_dice"] = {str(k): v for k, v in self.per_class_dice.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    CSV_FIELDS = ("dice", "miou", "map50", "depth_mae_mm", "images", "instances")

    def csv_row(self) -> Dict[str, float]:
        return {k: getattr(self, k) for k in self.CSV_FIELDS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerow(self.csv_row())
        return buf.getvalue()


def evaluate_predictions(
    pred_masks: Sequence[np.ndarray],
    pred_depths: Sequence[np.ndarray],
    detections: Sequence[Sequence[Detection]],
    samples: Sequence,
    num_classes: int,
    iou_threshold: float = 0.5,
) -> EvalReport:
    """Score predictions against samples.

    Dice and mIoU pool pixel counts over the whole split; Dice is on the
    instrument-vs-background foreground, with per-class Dice alongside.
    """
    if not samples:
        raise ValueError("cannot evaluate an empty split")
    inter = total = 0
    cls_inter = np.zeros(num_classes)
    cls_total = np.zeros(num_classes)
    abs_err_mm = 0.0
    pixels = 0
    for pm, pd, s in zip(pred_masks, pred_depths, samples):
        pm, tm = np.asarray(pm), np.asarray(s.mask)
        a, b = pm > 0, tm > 0
        inter += np.count_nonzero(a & b)
        total += np.count_nonzero(a) + np.count_nonzero(b)
        for c in range(1, num_classes):
            pc, tc = pm == c, tm == c
            cls_inter[c] += np.count_nonzero(pc & tc)
            cls_total[c] += np.count_nonzero(pc) + np.count_nonzero(tc)
        abs_err_mm += float(np.sum(np.abs(np.asarray(pd) - s.depth))) * s.depth_scale_mm
        pixels += s.depth.size
    miou = miou_hard(
        np.concatenate([np.asarray(p).reshape(-1) for p in pred_masks]),
        np.concatenate([np.asarray(s.mask).reshape(-1) for s in samples]),
        num_classes,
    )
    gts = [s.boxes for s in samples]
    m, per_class = mean_average_precision(detections, gts, iou_threshold)
    return EvalReport(
        dice=1.0 if total == 0 else 2.0 * inter / total,
        miou=miou,
        map50=m,
        depth_mae_mm=abs_err_mm / pixels,
        per_class_ap=per_class,
        per_class_dice={c: (2.0 * cls_inter[c] / cls_total[c]) for c in range(1, num_classes) if cls_total[c] > 0},
        images=len(samples),
        instances=sum(len(g) for g in gts),
    )

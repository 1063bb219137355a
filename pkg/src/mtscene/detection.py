"""Anchor-free, center-sampled detection grid: target assignment and decoding.

Each grid cell (stride ``s`` pixels) predicts an objectness logit, one
logit per instrument class and four log-distances ``raw``; the decoded
distances from the cell centre to the box edges are ``s * exp(raw)``.
Instrument classes are the mask labels ``1..C-1``; logit channel ``k``
belongs to label ``k + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor
from .autodiff.tensor import _sigmoid
from .boxes import Box, Detection, iou_box
from .errors import DataError

SATURATED_LOGIT = 30.0


@dataclass
class DetectionGrid:
    objectness: Tensor  # (B, h, w)
    class_logits: Tensor  # (B, Cd, h, w)
    box_raw: Tensor  # (B, 4, h, w), order left, top, right, bottom
    stride: int

    @property
    def extents(self) -> Tuple[int, int]:
        return self.objectness.shape[-2:]

    def __getitem__(self, b: int) -> "DetectionGrid":
        return DetectionGrid(
            Tensor(self.objectness.data[b : b + 1]),
            Tensor(self.class_logits.data[b : b + 1]),
            Tensor(self.box_raw.data[b : b + 1]),
            self.stride,
        )


@dataclass
class MatchedTargets:
    """Assignment of ground-truth boxes to cells for a batch.

    ``cells`` rows are ``(batch, row, col)``; ``classes`` are 0-based logit
    channels; ``ltrb`` are pixel distances from the cell centre to the edges.
    """

    positive: np.ndarray  # (B, h, w) bool
    cells: np.ndarray  # (n, 3) int
    classes: np.ndarray  # (n,) int
    ltrb: np.ndarray  # (n, 4) float
    stride: int

    @property
    def count(self) -> int:
        return len(self.cells)


def cell_of(x: float, y: float, stride: int, extents: Tuple[int, int]) -> Tuple[int, int]:
    """Row/column of the cell whose half-open pixel interval contains (x, y)."""
    h, w = extents
    return min(int(np.floor(y / stride)), h - 1), min(int(np.floor(x / stride)), w - 1)


def match_targets(boxes: Sequence[Box], extents: Tuple[int, int], stride: int) -> List[tuple]:
    """Assign each box to the cell containing its centre.

    Returns ``[(row, col, box, ltrb)]`` with one entry per occupied cell.
    When two boxes share a cell the larger one wins.
    """
    h, w = extents
    best = {}
    for box in boxes:
        if box.x1 <= box.x0 or box.y1 <= box.y0:
            raise DataError(f"zero-area box {tuple(box)}")
        if box.x0 < 0 or box.y0 < 0 or box.x1 > w * stride or box.y1 > h * stride:
            raise DataError(f"box {tuple(box)} outside image {w * stride}x{h * stride}")
        cx, cy = box.center
        cell = cell_of(cx, cy, stride, extents)
        if cell not in best or box.area > best[cell].area:
            best[cell] = box
    out = []
    for (r, c), box in sorted(best.items()):
        px, py = (c + 0.5) * stride, (r + 0.5) * stride
        ltrb = np.array([px - box.x0, py - box.y0, box.x1 - px, box.y1 - py])
        # centre-in-cell guarantees positive distances only for boxes wider than a cell
        out.append((r, c, box, np.maximum(ltrb, 0.25)))
    return out


def match_batch(batch_boxes: Sequence[Sequence[Box]], extents: Tuple[int, int], stride: int) -> MatchedTargets:
    positive = np.zeros((len(batch_boxes),) + tuple(extents), dtype=bool)
    cells, classes, ltrbs = [], [], []
    for b, boxes in enumerate(batch_boxes):
        for r, c, box, ltrb in match_targets(boxes, extents, stride):
            positive[b, r, c] = True
            cells.append((b, r, c))
            classes.append(box.cls - 1)
            ltrbs.append(ltrb)
    return MatchedTargets(
        positive,
        np.array(cells, dtype=np.intp).reshape(-1, 3),
        np.array(classes, dtype=np.intp),
        np.array(ltrbs, dtype=np.float64).reshape(-1, 4),
        stride,
    )


def grid_from_targets(matched: MatchedTargets, num_det_classes: int) -> DetectionGrid:
    """A grid with saturated logits that decodes exactly to the matched boxes."""
    B, h, w = matched.positive.shape
    obj = np.where(matched.positive, SATURATED_LOGIT, -SATURATED_LOGIT)
    cls = np.zeros((B, num_det_classes, h, w))
    raw = np.zeros((B, 4, h, w))
    for (b, r, c), k, ltrb in zip(matched.cells, matched.classes, matched.ltrb):
        cls[b, k, r, c] = SATURATED_LOGIT
        raw[b, :, r, c] = np.log(ltrb / matched.stride)
    return DetectionGrid(Tensor(obj), Tensor(cls), Tensor(raw), matched.stride)


def nms(detections: Sequence[Detection], iou_threshold: float) -> List[Detection]:
    """Greedy per-class non-maximum suppression, output in descending score order."""
    order = sorted(detections, key=lambda d: -d.score)
    kept: List[Detection] = []
    for det in order:
        if all(k.cls != det.cls or iou_box(k, det) <= iou_threshold for k in kept):
            kept.append(det)
    return kept


def decode_detections(
    grid: DetectionGrid,
    objectness_threshold: float = 0.05,
    nms_iou: float = 0.5,
    max_detections: Optional[int] = 50,
    batch_index: int = 0,
) -> List[Detection]:
    """Scored boxes for one image of ``grid``.

    The score of a cell is ``sigmoid(objectness) * max_k softmax(class)_k``.
    Boxes are clipped to the image.
    """
    if not (0.0 <= objectness_threshold <= 1.0 and 0.0 <= nms_iou <= 1.0):
        raise ValueError("thresholds must lie in [0, 1]")
    s = grid.stride
    obj = _sigmoid(grid.objectness.data[batch_index])
    logits = grid.class_logits.data[batch_index]
    probs = np.exp(logits - logits.max(axis=0, keepdims=True))
    probs /= probs.sum(axis=0, keepdims=True)
    cls = probs.argmax(axis=0)
    score = obj * probs.max(axis=0)
    dist = s * np.exp(np.clip(grid.box_raw.data[batch_index], -20.0, 20.0))
    h, w = score.shape
    W, H = w * s, h * s
    dets = []
    for r, c in zip(*np.nonzero(score > objectness_threshold)):
        px, py = (c + 0.5) * s, (r + 0.5) * s
        l, t, rr, bb = dist[:, r, c]
        x0, y0 = max(px - l, 0.0), max(py - t, 0.0)
        x1, y1 = min(px + rr, float(W)), min(py + bb, float(H))
        if x1 <= x0 or y1 <= y0:
            continue
        dets.append(Detection(int(cls[r, c]) + 1, float(score[r, c]), x0, y0, x1, y1))
    kept = nms(dets, nms_iou)
    return kept[:max_detections] if max_detections is not None else kept

import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mtscene.boxes import Box, Detection, iou_box
from mtscene.errors import ShapeError
from mtscene.metrics import (
    EvalReport,
    average_precision,
    average_precision_multi,
    depth_mae_mm,
    dice,
    evaluate_predictions,
    mean_average_precision,
)


def _iou_fraction(a, b):
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return Fraction(0)
    inter = Fraction(iw) * Fraction(ih)
    union = Fraction(a.x1 - a.x0) * Fraction(a.y1 - a.y0) + Fraction(b.x1 - b.x0) * Fraction(b.y1 - b.y0) - inter
    return inter / union


def ap_oracle(dets, gts, thr=0.5):
    """Exact all-point AP from every prefix of the ranked list (rational arithmetic)."""
    if not gts:
        return 0.0
    ranked = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    thr = Fraction(thr)
    points = []
    for k in range(1, len(ranked) + 1):
        used, tp = set(), 0
        for i in ranked[:k]:
            cands = [(_iou_fraction(dets[i], g), -j) for j, g in enumerate(gts) if j not in used]
            cands = [c for c in cands if c[0] >= thr]
            if cands:
                # best overlap; on a tie the later ground truth wins, as in a >= scan
                best = max(cands)
                used.add(-best[1])
                tp += 1
        points.append((Fraction(tp, len(gts)), Fraction(tp, k)))
    ap, prev_r = Fraction(0), Fraction(0)
    for k, (r, _) in enumerate(points):
        if r > prev_r:
            ap += (r - prev_r) * max(p for _, p in points[k:])
            prev_r = r
    return float(ap)


def _random_instance(rng):
    grid = 8
    n_gt = int(rng.integers(0, 6))
    n_det = int(rng.integers(0, 11))

    def box(cls=1):
        x0, y0 = rng.integers(0, grid - 1, 2)
        x1 = rng.integers(x0 + 1, grid + 1)
        y1 = rng.integers(y0 + 1, grid + 1)
        return Box(cls, float(x0), float(y0), float(x1), float(y1))

    gts = [box() for _ in range(n_gt)]
    dets = []
    for _ in range(n_det):
        if gts and rng.random() < 0.6:
            g = gts[rng.integers(len(gts))]
            jitter = rng.integers(-1, 2, 4)
            x0, y0 = max(g.x0 + jitter[0], 0), max(g.y0 + jitter[1], 0)
            x1, y1 = max(g.x1 + jitter[2], x0 + 1), max(g.y1 + jitter[3], y0 + 1)
            b = Box(1, float(x0), float(y0), float(x1), float(y1))
        else:
            b = box()
        # coarse scores so ties occur
        dets.append(Detection(1, float(rng.integers(1, 5)) / 4, *b[1:]))
    return dets, gts


def test_ap_matches_brute_force_oracle_on_200_instances():
    rng = np.random.default_rng(0)
    for _ in range(200):
        dets, gts = _random_instance(rng)
        assert average_precision(dets, gts) == ap_oracle(dets, gts)


def test_ap_examples():
    g = Box(1, 0.0, 0.0, 4.0, 4.0)
    assert average_precision([Detection(1, 0.9, *g[1:])], [g]) == 1.0
    assert average_precision([], [g]) == 0.0
    g2 = Box(1, 10.0, 10.0, 14.0, 14.0)
    dets = [
        Detection(1, 0.9, *g[1:]),
        Detection(1, 0.8, 20.0, 20.0, 24.0, 24.0),
        Detection(1, 0.7, *g2[1:]),
    ]
    assert ap_oracle(dets, [g, g2]) == 5 / 6
    assert average_precision(dets, [g, g2]) == 5 / 6


@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100.0))
def test_ap_invariant_to_positive_score_scaling(seed, scale):
    dets, gts = _random_instance(np.random.default_rng(seed))
    scaled = [d._replace(score=d.score * scale) for d in dets]
    assert average_precision(scaled, gts) == average_precision(dets, gts)


@given(st.integers(0, 2**31 - 1))
def test_ap_never_increases_with_a_top_false_positive(seed):
    dets, gts = _random_instance(np.random.default_rng(seed))
    fp = Detection(1, 2.0, 100.0, 100.0, 101.0, 101.0)
    assert average_precision([fp] + dets, gts) <= average_precision(dets, gts)


def test_map_over_classes_and_multi_image():
    a, b = Box(1, 0.0, 0.0, 4.0, 4.0), Box(2, 5.0, 5.0, 9.0, 9.0)
    dets = [[Detection(1, 0.9, *a[1:])], [Detection(3, 0.5, 0.0, 0.0, 1.0, 1.0)]]
    m, per = mean_average_precision(dets, [[a], [b]])
    assert per == {1: 1.0, 2: 0.0, 3: 0.0}
    assert m == 0.5
    # a detection may only match ground truth in its own image
    assert average_precision_multi([[], [Detection(1, 0.9, *a[1:])]], [[a], []]) == 0.0


def _dice_oracle(a, b):
    inter = sum(1 for x, y in zip(a.ravel(), b.ravel()) if x and y)
    return 2 * inter / (int(a.sum()) + int(b.sum()))


@given(st.integers(0, 2**31 - 1))
def test_dice_matches_counting_oracle_and_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((6, 6)) < 0.4, rng.random((6, 6)) < 0.5
    if a.any() or b.any():
        assert dice(a, b) == _dice_oracle(a, b)
    assert dice(a, b) == dice(b, a)
    if a.any():
        assert dice(a, a) == 1.0


def test_dice_examples():
    t = np.zeros((4, 4), bool)
    t[:2] = True
    half = np.zeros((4, 4), bool)
    half[0] = True
    assert dice(t, t) == 1.0
    assert dice(t, ~t) == 0.0
    assert dice(half, t) == pytest.approx(2 / 3, abs=1e-15)
    with pytest.raises(ShapeError):
        dice(t, t[:2])


@given(st.integers(0, 2**31 - 1))
def test_box_iou_matches_pixel_counting(seed):
    rng = np.random.default_rng(seed)

    def box():
        x0, y0 = rng.integers(0, 10, 2)
        return Box(1, float(x0), float(y0), float(rng.integers(x0 + 1, 12)), float(rng.integers(y0 + 1, 12)))

    a, b = box(), box()
    grid = np.zeros((2, 12, 12), bool)
    for k, bx in enumerate((a, b)):
        grid[k, int(bx.y0) : int(bx.y1), int(bx.x0) : int(bx.x1)] = True
    inter = np.count_nonzero(grid[0] & grid[1])
    union = np.count_nonzero(grid[0] | grid[1])
    assert iou_box(a, b) == inter / union


def test_depth_mae_examples():
    d = np.random.default_rng(1).uniform(0.2, 0.8, (5, 5))
    assert depth_mae_mm(d, d, 150.0) == 0.0
    assert depth_mae_mm(d + 0.01, d, 150.0) == pytest.approx(1.5, abs=1e-12)


class _S:
    def __init__(self, mask, depth, boxes):
        self.mask, self.depth, self.boxes, self.depth_scale_mm = mask, depth, boxes, 150.0


def test_evaluate_predictions_perfect_and_report_serialisation():
    mask = np.zeros((8, 8), np.uint8)
    mask[2:6, 1:4] = 2
    depth = np.full((8, 8), 0.7)
    b = Box(2, 1.0, 2.0, 4.0, 6.0)
    rep = evaluate_predictions([mask], [depth], [[Detection(2, 0.9, *b[1:])]], [_S(mask, depth, [b])], 4)
    assert (rep.dice, rep.miou, rep.map50, rep.depth_mae_mm) == (1.0, 1.0, 1.0, 0.0)
    assert rep.images == 1 and rep.instances == 1
    for v in (rep.dice, rep.miou, rep.map50):
        assert 0.0 <= v <= 1.0
    d = json.loads(rep.to_json())
    assert d["per_class_ap"] == {"2": 1.0}
    header, row = rep.to_csv().strip().split("\n")
    assert header.split(",") == list(EvalReport.CSV_FIELDS)
    assert rep.score == 1.0

import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mtscene.autodiff import Tensor, smooth_l1, softmax
from mtscene.boxes import Box
from mtscene.detection import DetectionGrid, SATURATED_LOGIT, grid_from_targets, match_batch
from mtscene.errors import ConfigError, DataError, NumericalError, ShapeError
from mtscene.harness.gradcheck import LOSS_TOLERANCE, loss_checks
from mtscene.losses import (
    DepthLossConfig,
    SegLossConfig,
    depth_loss,
    detection_loss,
    miou_hard,
    seg_loss,
    sobel_edge_loss,
    sobel_magnitude,
    soft_miou,
    ssim,
    total_loss,
)

getcontext().prec = 40


def test_every_loss_passes_gradient_check():
    errors = loss_checks(0)
    bad = {k: v for k, v in errors.items() if not v < LOSS_TOLERANCE}
    assert not bad, bad


# segmentation


def test_bce_at_half_probability_is_ln2():
    ln2 = float(Decimal(2).ln())
    target = np.random.default_rng(0).integers(0, 2, size=(2, 6, 6))
    cfg = SegLossConfig(alpha=1.0, beta=0.0, num_classes=2, binary_mode=True)
    _, parts = seg_loss(np.zeros((2, 1, 6, 6)), target, cfg)
    assert abs(parts["ce_or_bce"] - ln2) < 1e-15


def test_ce_at_uniform_logits_is_ln3():
    ln3 = float(Decimal(3).ln())
    target = np.random.default_rng(1).integers(0, 3, size=(5, 5))
    cfg = SegLossConfig(alpha=1.0, beta=0.0, num_classes=3)
    loss, _ = seg_loss(np.zeros((3, 5, 5)), target, cfg)
    assert abs(loss.item() - ln3) < 1e-15


def test_saturated_binary_prediction_gives_zero_loss():
    target = np.zeros((1, 4, 4), dtype=int)
    target[0, :, :2] = 1
    logits = np.where(target[:, None] > 0, 60.0, -60.0)
    loss, parts = seg_loss(logits, target, SegLossConfig(num_classes=2, binary_mode=True))
    assert loss.item() < 1e-12
    assert parts["miou_term"] < 1e-12


def test_alpha_one_beta_zero_equals_plain_cross_entropy():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(2, 4, 5, 5))
    target = rng.integers(0, 4, size=(2, 5, 5))
    loss, _ = seg_loss(logits, target, SegLossConfig(alpha=1.0, beta=0.0, num_classes=4))
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    b, i, j = np.indices(target.shape)
    ref = -logp[b, target, i, j].mean()
    assert abs(loss.item() - ref) < 1e-12

    bt = rng.integers(0, 2, size=(2, 5, 5))
    x = rng.normal(size=(2, 1, 5, 5))
    loss, _ = seg_loss(x, bt, SegLossConfig(alpha=1.0, beta=0.0, num_classes=2, binary_mode=True))
    p = 1 / (1 + np.exp(-x[:, 0]))
    ref = -(bt * np.log(p) + (1 - bt) * np.log(1 - p)).mean()
    assert abs(loss.item() - ref) < 1e-12


def test_seg_loss_errors():
    cfg = SegLossConfig(num_classes=3)
    with pytest.raises(DataError):
        seg_loss(np.zeros((3, 2, 2)), np.full((2, 2), 3), cfg)
    with pytest.raises(DataError):
        seg_loss(np.zeros((3, 0, 0)), np.zeros((0, 0), dtype=int), cfg)
    with pytest.raises(ShapeError):
        seg_loss(np.zeros((4, 2, 2)), np.zeros((2, 2), dtype=int), cfg)
    with pytest.raises(ConfigError):
        SegLossConfig(alpha=0.0, beta=0.0)
    with pytest.raises(ConfigError):
        SegLossConfig(alpha=-1.0)


def _miou_oracle(pred, target, num_classes):
    ious = []
    for c in range(num_classes):
        inter = sum(1 for p, t in zip(pred.ravel(), target.ravel()) if p == c and t == c)
        union = sum(1 for p, t in zip(pred.ravel(), target.ravel()) if p == c or t == c)
        if union:
            ious.append(inter / union)
    return sum(ious) / len(ious)


def test_miou_half_map_example():
    target = np.ones((4, 6), dtype=int)
    pred = np.zeros((4, 6), dtype=int)
    pred[:, :3] = 1
    assert _miou_oracle(pred, target, 2) == 0.25
    assert miou_hard(pred, target, 2) == 0.25


def test_miou_identical_and_disjoint():
    m = np.random.default_rng(3).integers(0, 3, size=(5, 5))
    assert miou_hard(m, m, 3) == 1.0
    a = np.zeros((4, 4), dtype=int)
    a[:2] = 1
    assert miou_hard(a, 1 - a, 2) == 0.0
    with pytest.raises(DataError):
        miou_hard(np.full((2, 2), 5), np.full((2, 2), 5), 3)


@given(st.integers(0, 2**31 - 1))
def test_miou_matches_counting_oracle(seed):
    rng = np.random.default_rng(seed)
    pred = rng.integers(0, 4, size=(5, 7))
    target = rng.integers(0, 4, size=(5, 7))
    assert miou_hard(pred, target, 4) == _miou_oracle(pred, target, 4)


@given(st.integers(0, 2**31 - 1))
def test_soft_miou_self_bounded_by_hard_miou(seed):
    # soft IoU of p against itself is sum p^2 / sum(2p - p^2) <= 1, while the
    # hard mIoU of argmax(p) against itself is exactly 1
    rng = np.random.default_rng(seed)
    probs = softmax(Tensor(rng.normal(scale=3, size=(3, 6, 6))), axis=0)
    labels = probs.data.argmax(axis=0)
    soft = soft_miou(probs, probs.data).item()
    assert soft <= miou_hard(labels, labels, 3) + 1e-12
    onehot = np.eye(3)[labels].transpose(2, 0, 1)
    assert abs(soft_miou(Tensor(onehot), onehot).item() - 1.0) < 1e-12


# depth


def test_ssim_constant_maps_closed_form():
    cfg = DepthLossConfig()
    c1 = cfg.ssim_c1
    expected = c1 / (1 + c1)
    # (2*0*1 + C1)(2*0 + C2) / ((0 + 1 + C1)(0 + 0 + C2)) per window, all windows identical
    c2 = cfg.ssim_c2
    assert abs((2 * 0 * 1 + c1) * (0 + c2) / ((0 + 1 + c1) * (0 + c2)) - expected) < 1e-18
    s = ssim(np.zeros((9, 9)), np.ones((9, 9)), cfg).item()
    assert abs(s - expected) < 1e-15


def test_ssim_identical_is_one_and_window_checked():
    d = np.random.default_rng(4).uniform(size=(8, 8))
    assert abs(ssim(d, d).item() - 1.0) < 1e-12
    with pytest.raises(ShapeError):
        ssim(np.zeros((5, 5)), np.zeros((5, 5)))


def _sobel_oracle(x):
    kx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    h, w = len(x), len(x[0])
    out = []
    for i in range(h - 2):
        for j in range(w - 2):
            gx = sum(kx[a][b] * x[i + a][j + b] for a in range(3) for b in range(3))
            gy = sum(kx[b][a] * x[i + a][j + b] for a in range(3) for b in range(3))
            out.append(math.sqrt(gx * gx + gy * gy + 1e-12))
    return out


def test_edge_loss_step_edge_matches_direct_convolution():
    step = [[0.0] * 5 for _ in range(2)] + [[1.0] * 5 for _ in range(3)]
    const = [[0.0] * 5 for _ in range(5)]
    sp, st_ = _sobel_oracle(step), _sobel_oracle(const)
    expected = sum(abs(a - b) for a, b in zip(sp, st_)) / len(sp)
    got = sobel_edge_loss(np.array(step), np.array(const)).item()
    assert abs(got - expected) < 1e-12
    assert got > 0
    np.testing.assert_allclose(sobel_magnitude(np.array(step)).data.ravel(), sp, rtol=0, atol=1e-15)


def test_edge_loss_zero_cases():
    assert sobel_edge_loss(np.full((5, 5), 0.2), np.full((5, 5), 0.7)).item() == 0.0
    d = np.random.default_rng(5).uniform(size=(6, 6))
    assert sobel_edge_loss(d, d).item() == 0.0
    with pytest.raises(ShapeError):
        sobel_edge_loss(np.zeros((2, 5)), np.zeros((2, 5)))


def test_depth_loss_identity_and_offset():
    rng = np.random.default_rng(6)
    d = rng.uniform(0.2, 0.8, size=(2, 9, 9))
    loss, parts = depth_loss(d, d)
    assert abs(loss.item()) < 1e-12
    cfg = DepthLossConfig()
    _, parts = depth_loss(d + 0.1, d, cfg)
    assert abs(parts["mae"] - 0.1) < 1e-12
    assert parts["edge"] < 1e-12
    assert parts["ssim"] == pytest.approx(1 - ssim(d + 0.1, d, cfg).item(), abs=1e-15)


def test_depth_loss_errors():
    with pytest.raises(NumericalError):
        depth_loss(np.full((8, 8), np.nan), np.zeros((8, 8)))
    with pytest.raises(ShapeError):
        depth_loss(np.zeros((8, 8)), np.zeros((8, 9)))


@given(st.integers(0, 2**31 - 1))
def test_losses_non_negative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, 8, 8)), rng.uniform(size=(2, 8, 8))
    loss, parts = depth_loss(a, b)
    assert loss.item() >= 0 and parts["ssim"] >= 0
    s, _ = seg_loss(rng.normal(size=(1, 3, 4, 4)), rng.integers(0, 3, size=(1, 4, 4)), SegLossConfig(num_classes=3))
    assert s.item() >= 0


# detection


def test_smooth_l1_closed_forms():
    assert smooth_l1(Tensor(0.5)).item() == 0.125
    assert smooth_l1(Tensor(2.0)).item() == 1.5
    assert smooth_l1(Tensor(-2.0)).item() == 1.5


def test_detection_loss_perfect_prediction():
    boxes = [[Box(1, 2.0, 3.0, 14.0, 11.0)], [Box(2, 5.0, 4.0, 30.0, 29.0)]]
    targets = match_batch(boxes, (8, 8), 4)
    grid = grid_from_targets(targets, 3)
    loss, parts = detection_loss(grid, targets)
    assert parts["smooth_l1"] == 0.0
    assert parts["det_ce"] < 1e-11
    assert loss.item() < 1e-11


def test_detection_loss_single_residual():
    boxes = [[Box(1, 0.0, 0.0, 8.0, 8.0)]]
    targets = match_batch(boxes, (2, 2), 4)
    grid = grid_from_targets(targets, 1)
    raw = grid.box_raw.data.copy()
    b, r, c = targets.cells[0]
    raw[b, 0, r, c] += 0.5
    shifted = DetectionGrid(grid.objectness, grid.class_logits, Tensor(raw), 4)
    _, parts = detection_loss(shifted, targets)
    assert abs(parts["smooth_l1"] - 0.125 / 4) < 1e-15


def test_detection_loss_shape_mismatch():
    targets = match_batch([[Box(1, 0.0, 0.0, 8.0, 8.0)]], (2, 2), 4)
    grid = DetectionGrid(Tensor(np.zeros((1, 3, 3))), Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros((1, 4, 3, 3))), 4)
    with pytest.raises(ShapeError):
        detection_loss(grid, targets)


def test_saturated_logit_constant_is_large():
    assert SATURATED_LOGIT >= 20


# total


def test_total_loss_examples():
    assert total_loss(3.0, 6.0, 9.0, np.full(3, 1 / 3)).total == pytest.approx(6.0, abs=1e-12)
    assert total_loss(2.5, 7.0, 1.0, [1.0, 0.0, 0.0]).total == 2.5
    assert total_loss(0.0, 0.0, 0.0, [0.2, 0.3, 0.5]).total == 0.0
    with pytest.raises(ConfigError):
        total_loss(1.0, 1.0, 1.0, [0.5, 0.5])


@given(
    st.lists(st.floats(0, 100), min_size=3, max_size=3),
    st.floats(0, 100),
    st.integers(0, 2),
    st.lists(st.floats(0.01, 1), min_size=3, max_size=3),
)
def test_total_loss_is_weighted_sum_and_linear(losses, extra, k, raw_w):
    w = np.array(raw_w) / np.sum(raw_w)
    base = total_loss(*losses, w).total
    assert abs(base - float(np.dot(w, losses))) < 1e-9
    bumped = list(losses)
    bumped[k] += extra
    assert abs(total_loss(*bumped, w).total - base - w[k] * extra) < 1e-9

"""Window, normalization and activation operators built on :mod:`tensor`.

Primitive operators (own backward rule): softmax, log_softmax, log_sigmoid,
smooth_l1, conv2d, avg_pool2d, upsample_bilinear.  Everything else in this
module (gelu, layer_norm, linear, drop_path) is composed from primitives.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Optional

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, _sigmoid, as_tensor, matmul, mean, mul, sigmoid, sqrt


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._result(out, (x,), back, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(out, (x,), back, "log_softmax")


def log_sigmoid(x) -> Tensor:
    """``log(sigmoid(x))`` without overflow or ``log(0)`` for saturated logits."""
    x = as_tensor(x)
    out = -np.logaddexp(0.0, -x.data)

    def back(g):
        return (g * _sigmoid(-x.data),)

    return Tensor._result(out, (x,), back, "log_sigmoid")


def smooth_l1(x, beta: float = 1.0) -> Tensor:
    """Elementwise Huber-style penalty: 0.5 x^2 / beta inside |x| < beta, |x| - beta/2 outside."""
    x = as_tensor(x)
    ax = np.abs(x.data)
    inside = ax < beta
    out = np.where(inside, 0.5 * x.data**2 / beta, ax - 0.5 * beta)

    def back(g):
        return (g * np.where(inside, x.data / beta, np.sign(x.data)),)

    return Tensor._result(out, (x,), back, "smooth_l1")


def gelu(x) -> Tensor:
    # sigmoid approximation of the Gaussian CDF
    return mul(x, sigmoid(mul(x, 1.702)))


def layer_norm(x, weight, bias, eps: float = 1e-5) -> Tensor:
    mu = mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = mean(centered * centered, axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * weight + bias


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` over the last axis; ``weight`` is (in, out)."""
    out = matmul(x, weight)
    return out if bias is None else out + bias


def drop_path(x, prob: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Per-sample residual gate: zero with probability ``prob``, else scale by 1/(1-prob).

    Identity when not training or ``prob`` is 0, so the expectation is preserved.
    """
    if not training or prob <= 0.0:
        return x
    if rng is None:
        raise ValueError("drop_path needs an rng in training mode")
    keep = 1.0 - prob
    shape = (x.shape[0],) + (1,) * (x.ndim - 1)
    gate = (rng.random(shape) < keep).astype(np.float64) / keep
    return mul(x, gate)


# ---------------------------------------------------------------------------
# window operators


def _pad_hw(data: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return data
    pad = [(0, 0)] * (data.ndim - 2) + [(padding, padding), (padding, padding)]
    return np.pad(data, pad)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation on (B, C, H, W) with zero padding.

    ``weight`` is (O, C // groups, kh, kw).  Only ``groups`` in {1, C} with
    O == C for the depthwise case are supported.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    B, C, H, W = x.shape
    O, Cg, kh, kw = weight.shape
    depthwise = groups != 1
    if depthwise and not (groups == C and O == C and Cg == 1):
        raise ShapeError(f"conv2d: unsupported grouping groups={groups} for weight {weight.shape}")
    if not depthwise and Cg != C:
        raise ShapeError(f"conv2d: input has {C} channels, weight expects {Cg}")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {H}x{W}")
    xp = _pad_hw(x.data, padding)
    wd = weight.data

    def window(i, j, arr=xp):
        return arr[:, :, i : i + stride * (Ho - 1) + 1 : stride, j : j + stride * (Wo - 1) + 1 : stride]

    if depthwise:
        out = np.zeros((B, C, Ho, Wo))
        for i in range(kh):
            for j in range(kw):
                out += window(i, j) * wd[:, 0, i, j][None, :, None, None]
        cols = None
    else:
        # im2col: (B, Ho, Wo, C*kh*kw)
        cols = np.empty((B, Ho, Wo, C, kh, kw))
        for i in range(kh):
            for j in range(kw):
                cols[..., i, j] = window(i, j).transpose(0, 2, 3, 1)
        cols = cols.reshape(B * Ho * Wo, C * kh * kw)
        out = (cols @ wd.reshape(O, -1).T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents = (x, weight, bias)

    def back(g):
        gx = gw = gb = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if depthwise:
            if weight.requires_grad:
                gw = np.zeros_like(wd)
                for i in range(kh):
                    for j in range(kw):
                        gw[:, 0, i, j] = (window(i, j) * g).sum(axis=(0, 2, 3))
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        window(i, j, gxp)[...] += g * wd[:, 0, i, j][None, :, None, None]
                gx = gxp
        else:
            g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
            if weight.requires_grad:
                gw = (g2.T @ cols).reshape(wd.shape)
            if x.requires_grad:
                dcols = (g2 @ wd.reshape(O, -1)).reshape(B, Ho, Wo, C, kh, kw)
                gxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        window(i, j, gxp)[...] += dcols[..., i, j].transpose(0, 3, 1, 2)
                gx = gxp
        if gx is not None and padding:
            gx = gx[..., padding:-padding, padding:-padding]
        return (gx, gw) if bias is None else (gx, gw, gb)

    return Tensor._result(out, parents, back, "conv2d")


def avg_pool2d(x, kernel: int, stride: int = 1) -> Tensor:
    """Mean over ``kernel`` x ``kernel`` windows of the last two axes (no padding)."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"avg_pool2d: need at least 2 dims, got {x.shape}")
    H, W = x.shape[-2:]
    if kernel > H or kernel > W:
        raise ShapeError(f"avg_pool2d: window {kernel} larger than map {H}x{W}")
    Ho = (H - kernel) // stride + 1
    Wo = (W - kernel) // stride + 1
    scale = 1.0 / (kernel * kernel)

    def window(arr, i, j):
        return arr[..., i : i + stride * (Ho - 1) + 1 : stride, j : j + stride * (Wo - 1) + 1 : stride]

    out = np.zeros(x.shape[:-2] + (Ho, Wo))
    for i in range(kernel):
        for j in range(kernel):
            out += window(x.data, i, j)
    out *= scale

    def back(g):
        gx = np.zeros_like(x.data)
        gs = g * scale
        for i in range(kernel):
            for j in range(kernel):
                window(gx, i, j)[...] += gs
        return (gx,)

    return Tensor._result(out, (x,), back, "avg_pool2d")


@lru_cache(maxsize=64)
def interpolation_matrix(size_out: int, size_in: int) -> np.ndarray:
    """Linear interpolation weights with half-pixel centres (align_corners=False)."""
    m = np.zeros((size_out, size_in))
    scale = size_in / size_out
    for o in range(size_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), size_in - 1)
        i1 = min(i0 + 1, size_in - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    m.setflags(write=False)
    return m


def upsample_bilinear(x, size) -> Tensor:
    """Bilinear resize of the last two axes to ``size = (H_out, W_out)``."""
    x = as_tensor(x)
    H, W = x.shape[-2:]
    Ho, Wo = size
    ah = interpolation_matrix(Ho, H)
    aw = interpolation_matrix(Wo, W)
    out = ah @ x.data @ aw.T

    def back(g):
        return (ah.T @ g @ aw,)

    return Tensor._result(out, (x,), back, "upsample_bilinear")

"""Parameterised building blocks: linear maps, norms, attention, convolutions."""

from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from ..autodiff import (
    Tensor,
    conv2d,
    drop_path,
    gelu,
    getitem,
    layer_norm,
    linear,
    softmax,
)


class Module:
    """Container of named trainable tensors and child modules."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()

    def param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, t in self._params.items():
            yield prefix + name, t
        for name, mod in self._children.items():
            yield from mod.named_parameters(prefix + name + ".")

    def parameters(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.named_parameters())


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return np.clip(rng.normal(0.0, std, size=shape), -2 * std, 2 * std)


class Linear(Module):
    def __init__(self, rng, fan_in: int, fan_out: int, std: float = 0.02):
        super().__init__()
        self.weight = self.param("weight", trunc_normal(rng, (fan_in, fan_out), std))
        self.bias = self.param("bias", np.zeros(fan_out))

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.weight = self.param("weight", np.ones(dim))
        self.bias = self.param("bias", np.zeros(dim))

    def __call__(self, x):
        return layer_norm(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, kernel: int, stride: int = 1, padding: Optional[int] = None, groups: int = 1):
        super().__init__()
        fan_in = (c_in // groups) * kernel * kernel
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups
        self.weight = self.param("weight", rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in // groups, kernel, kernel)))
        self.bias = self.param("bias", np.zeros(c_out))

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


def tokens_to_map(x: Tensor, hw: Tuple[int, int]) -> Tensor:
    """(B, N, C) -> (B, C, H, W)."""
    B, _, C = x.shape
    return x.transpose(0, 2, 1).reshape(B, C, hw[0], hw[1])


def map_to_tokens(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, H*W, C)."""
    B, C, H, W = x.shape
    return x.reshape(B, C, H * W).transpose(0, 2, 1)


class OverlapPatchEmbed(Module):
    """Strided convolution whose kernel is wider than its stride, then a token norm."""

    def __init__(self, rng, c_in: int, dim: int, patch_size: int, stride: int):
        super().__init__()
        self.proj = self.child("proj", Conv2d(rng, c_in, dim, patch_size, stride, patch_size // 2))
        self.norm = self.child("norm", LayerNorm(dim))

    def __call__(self, x):
        y = self.proj(x)
        hw = y.shape[-2:]
        return self.norm(map_to_tokens(y)), hw


class Attention(Module):
    """Full multi-head self-attention over all tokens."""

    def __init__(self, rng, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = self.child("qkv", Linear(rng, dim, 3 * dim))
        self.proj = self.child("proj", Linear(rng, dim, dim))

    def __call__(self, x):
        B, N, C = x.shape
        h = self.num_heads
        qkv = self.qkv(x).reshape(B, N, 3, h, C // h).transpose(2, 0, 3, 1, 4)
        q, k, v = (getitem(qkv, i) for i in range(3))
        attn = softmax((q @ k.transpose(0, 1, 3, 2)) * self.scale, axis=-1)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(B, N, C)
        return self.proj(out)


class MixFFN(Module):
    """Token MLP with a depthwise 3x3 convolution between the two projections."""

    def __init__(self, rng, dim: int, hidden: int):
        super().__init__()
        self.fc1 = self.child("fc1", Linear(rng, dim, hidden))
        self.dw = self.child("dw", Conv2d(rng, hidden, hidden, 3, groups=hidden))
        self.fc2 = self.child("fc2", Linear(rng, hidden, dim))

    def __call__(self, x, hw):
        y = self.fc1(x)
        y = map_to_tokens(self.dw(tokens_to_map(y, hw)))
        return self.fc2(gelu(y))


class Block(Module):
    def __init__(self, rng, dim: int, num_heads: int, mlp_ratio: int, drop_prob: float):
        super().__init__()
        self.drop_prob = drop_prob
        self.norm1 = self.child("norm1", LayerNorm(dim))
        self.attn = self.child("attn", Attention(rng, dim, num_heads))
        self.norm2 = self.child("norm2", LayerNorm(dim))
        self.ffn = self.child("ffn", MixFFN(rng, dim, dim * mlp_ratio))

    def __call__(self, x, hw, training: bool = False, rng=None):
        x = x + drop_path(self.attn(self.norm1(x)), self.drop_prob, rng, training)
        return x + drop_path(self.ffn(self.norm2(x), hw), self.drop_prob, rng, training)


class ConvHead(Module):
    """3x3 conv -> GELU -> conv (1x1 by default)."""

    def __init__(self, rng, c_in: int, hidden: int, c_out: int, out_kernel: int = 1):
        super().__init__()
        self.conv = self.child("conv", Conv2d(rng, c_in, hidden, 3))
        self.out = self.child("out", Conv2d(rng, hidden, c_out, out_kernel))
        self.out.weight.data *= 0.1

    def __call__(self, x):
        return self.out(gelu(self.conv(x)))

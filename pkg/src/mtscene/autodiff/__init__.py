"""Minimal reverse-mode autodiff over numpy arrays.

Operator set (each has its own backward rule): add, sub, mul, div, pow,
sqrt, exp, log, sigmoid, log_sigmoid, abs, smooth_l1, sum, mean, matmul,
softmax, log_softmax, conv2d (dense and depthwise), avg_pool2d,
upsample_bilinear, plus the shape-only ops reshape, transpose, getitem and
concat.  Layer norm, GELU, linear layers and drop path are compositions.
"""

from .functional import (
    avg_pool2d,
    conv2d,
    drop_path,
    gelu,
    interpolation_matrix,
    layer_norm,
    linear,
    log_sigmoid,
    log_softmax,
    smooth_l1,
    softmax,
    upsample_bilinear,
)
from .graph import Graph, NodeRecord, grad_check
from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    div,
    exp,
    getitem,
    grad,
    grad_enabled,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    power,
    reshape,
    sigmoid,
    sqrt,
    sub,
    tabs,
    transpose,
    tsum,
)

__all__ = [
    "Graph",
    "NodeRecord",
    "Tensor",
    "add",
    "as_tensor",
    "avg_pool2d",
    "concat",
    "conv2d",
    "div",
    "drop_path",
    "exp",
    "gelu",
    "getitem",
    "grad",
    "grad_check",
    "grad_enabled",
    "interpolation_matrix",
    "layer_norm",
    "linear",
    "log",
    "log_sigmoid",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "power",
    "reshape",
    "sigmoid",
    "smooth_l1",
    "softmax",
    "sqrt",
    "sub",
    "tabs",
    "transpose",
    "tsum",
    "upsample_bilinear",
]

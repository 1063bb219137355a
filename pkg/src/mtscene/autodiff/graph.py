"""Named-input computation graphs and a central-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, grad, no_grad, topological_order


@dataclass(frozen=True)
class NodeRecord:
    index: int
    op: str
    inputs: Tuple[int, ...]
    shape: Tuple[int, ...]


class Graph:
    """Wraps ``fn(inputs, parameters) -> Tensor | dict`` with named parameters.

    ``forward`` records the operator DAG of one evaluation; ``backward``
    differentiates it.  A Graph instance must not be shared between threads
    while a forward/backward pair is in flight.
    """

    def __init__(
        self,
        fn: Callable,
        parameters: Optional[Mapping[str, np.ndarray]] = None,
        input_shapes: Optional[Mapping[str, Sequence[int]]] = None,
    ):
        self.fn = fn
        self.parameters: Dict[str, Tensor] = {
            name: Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
            for name, value in (parameters or {}).items()
        }
        self.input_shapes = {k: tuple(v) for k, v in (input_shapes or {}).items()}
        self._outputs: Optional[Dict[str, Tensor]] = None
        self._inputs: Dict[str, Tensor] = {}

    def forward(self, inputs: Mapping[str, object], differentiable_inputs: bool = False) -> Dict[str, Tensor]:
        if self.input_shapes:
            missing = set(self.input_shapes) - set(inputs)
            extra = set(inputs) - set(self.input_shapes)
            if missing or extra:
                raise ShapeError(f"graph inputs: missing {sorted(missing)}, unexpected {sorted(extra)}")
        tensors = {}
        for name, value in inputs.items():
            arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
            want = self.input_shapes.get(name)
            if want is not None and arr.shape != want:
                raise ShapeError(f"graph input '{name}': expected shape {want}, got {arr.shape}")
            tensors[name] = Tensor(arr, requires_grad=differentiable_inputs, name=name)
        out = self.fn(tensors, self.parameters)
        self._outputs = out if isinstance(out, dict) else {"output": out}
        self._inputs = tensors
        return dict(self._outputs)

    def backward(self, seed=None, output: Optional[str] = None) -> Dict[str, np.ndarray]:
        """Gradients of one output w.r.t. every parameter (and differentiable input)."""
        if self._outputs is None:
            raise RuntimeError("backward called before forward")
        if output is None:
            if len(self._outputs) != 1:
                raise ValueError(f"graph has outputs {sorted(self._outputs)}; name one")
            output = next(iter(self._outputs))
        target = self._outputs[output]
        named = dict(self.parameters)
        named.update({k: v for k, v in self._inputs.items() if v.requires_grad})
        grads = grad(target, named.values(), seed)
        return dict(zip(named.keys(), grads))

    @property
    def nodes(self) -> list:
        """Operator records of the last forward, parents before children."""
        if self._outputs is None:
            return []
        order, index = [], {}
        for out in self._outputs.values():
            if not out.requires_grad:
                continue
            for node in topological_order(out):
                if id(node) in index:
                    continue
                index[id(node)] = len(order)
                order.append(node)
        return [
            NodeRecord(i, n.op, tuple(index[id(p)] for p in n._parents if id(p) in index), n.shape)
            for i, n in enumerate(order)
        ]


def grad_check(
    fn: Callable[[Dict[str, Tensor]], Tensor],
    point: Mapping[str, np.ndarray],
    step: float = 1e-6,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    order: int = 2,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The error at a coordinate is ``|a - n| / max(|a|, |n|, 1e-12)``.  With
    ``max_coords`` only that many coordinates (drawn uniformly without
    replacement across all inputs) are perturbed.  ``order=4`` uses the
    five-point stencil, which tolerates a larger step and so keeps roundoff
    small on coordinates with tiny gradients.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    base = {k: np.array(v, dtype=np.float64) for k, v in point.items()}
    tensors = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in base.items()}
    out = fn(tensors)
    if out.size != 1:
        raise ShapeError(f"grad_check: function must return a scalar, got shape {out.shape}")
    analytic = dict(zip(tensors, grad(out, tensors.values())))

    coords = [(k, i) for k, v in base.items() for i in range(v.size)]
    if max_coords is not None and max_coords < len(coords):
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    def evaluate(name, flat, delta):
        arrays = dict(base)
        arr = base[name].copy()
        arr.reshape(-1)[flat] += delta
        arrays[name] = arr
        with no_grad():
            return fn({k: Tensor(v) for k, v in arrays.items()}).item()

    worst = 0.0
    for name, flat in coords:
        if order == 2:
            numeric = (evaluate(name, flat, step) - evaluate(name, flat, -step)) / (2.0 * step)
        else:
            near = evaluate(name, flat, step) - evaluate(name, flat, -step)
            far = evaluate(name, flat, 2 * step) - evaluate(name, flat, -2 * step)
            numeric = (8.0 * near - far) / (12.0 * step)
        a = analytic[name].reshape(-1)[flat]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
        worst = max(worst, err)
    return worst

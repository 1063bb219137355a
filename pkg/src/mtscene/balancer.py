"""Task-weight balancing for the three-task loss.

Two update rules feed the weights of the weighted task sum:

* the adversarial (multiplicative) update, ``w_t <- w_t * exp(-eta * l_t)``
  followed by normalisation;
* gradient alignment, which solves ``(G G^T + lambda I) w = 1`` for the
  per-task gradient matrix ``G`` (one row per task, one column per shared
  parameter) and normalises the clamped solution.

Weights always live on the probability simplex.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ConfigError, DataError, NumericalError

MODES = ("awu", "gradient-alignment", "fixed")
SIGNS = ("as-written", "amplify-high-loss")
ANCHORS = ("initial", "previous")


@dataclass(frozen=True)
class BalancerConfig:
    mode: str = "awu"
    eta: float = 0.1
    eps: float = 1e-8
    lambda_reg: float = 1e-3
    sign: str = "as-written"
    align_every: int = 10
    # "initial": each update re-weights the starting weights by the current losses;
    # "previous": classic cumulative multiplicative weights.
    anchor: str = "initial"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.sign not in SIGNS:
            raise ConfigError(f"sign must be one of {SIGNS}, got {self.sign!r}")
        if self.anchor not in ANCHORS:
            raise ConfigError(f"anchor must be one of {ANCHORS}, got {self.anchor!r}")
        if not self.eta > 0 or not self.eps > 0 or self.lambda_reg < 0:
            raise ConfigError("need eta > 0, eps > 0 and lambda_reg >= 0")
        if self.align_every < 1:
            raise ConfigError("align_every must be a positive integer")


def check_weights(weights, size: Optional[int] = None) -> np.ndarray:
    """Validate a simplex weight vector and return it as a float array."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or (size is not None and w.size != size):
        raise ConfigError(f"expected a weight vector of length {size}, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ConfigError(f"weights must be finite and positive, got {w}")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ConfigError(f"weights must sum to 1, got {w.sum()!r}")
    return w


def _normalize(w: np.ndarray, eps: float) -> np.ndarray:
    """Divide by the eps-padded sum, floor at eps, then rescale onto the simplex exactly."""
    w = w / (w.sum() + eps)
    w = np.maximum(w, eps)
    return w / w.sum()


def awu_step(weights, losses, cfg: BalancerConfig = BalancerConfig()) -> np.ndarray:
    """One adversarial multiplicative update of the task weights."""
    w = np.asarray(weights, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    if losses.shape != w.shape:
        raise DataError(f"got {losses.size} losses for {w.size} weights")
    if not np.all(np.isfinite(losses)):
        raise NumericalError(f"non-finite task loss in {losses}")
    direction = -1.0 if cfg.sign == "as-written" else 1.0
    logits = direction * cfg.eta * losses
    # a common shift cancels under normalisation and keeps exp in range
    logits -= logits.max()
    return _normalize(w * np.exp(logits), cfg.eps)


def gram(grads, lambda_reg: float = 0.0) -> np.ndarray:
    """Regularised task Gram matrix ``G G^T + lambda I`` (T x T)."""
    g = np.asarray(grads, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 1:
        raise DataError(f"task gradients must be a (T, P) matrix, got {g.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite task gradient")
    m = g @ g.T + lambda_reg * np.eye(g.shape[0])
    return 0.5 * (m + m.T)


def solve_alignment(grads, lambda_reg: float) -> np.ndarray:
    """Raw (unnormalised) solution of ``(G G^T + lambda I) w = 1``."""
    m = gram(grads, lambda_reg)
    ones = np.ones(m.shape[0])
    scale = np.abs(m).max()
    if scale == 0.0 or np.linalg.cond(m) > 1e12:
        raise NumericalError("task Gram matrix is singular; use lambda_reg > 0")
    w = np.linalg.solve(m, ones)
    return w


def optimal_weights(grads, cfg: BalancerConfig = BalancerConfig()) -> np.ndarray:
    raw = solve_alignment(grads, cfg.lambda_reg)
    return _normalize(np.maximum(raw, 0.0), cfg.eps)


@dataclass
class BalancerState:
    weights: np.ndarray
    initial: np.ndarray
    step: int = 0
    history: list = field(default_factory=list)


def init_state(initial_weights=None, num_tasks: int = 3) -> BalancerState:
    if initial_weights is None:
        w = np.full(num_tasks, 1.0 / num_tasks)
    else:
        w = check_weights(initial_weights, num_tasks)
    return BalancerState(weights=w.copy(), initial=w.copy())


def needs_gradients(state: BalancerState, cfg: BalancerConfig) -> bool:
    """Whether the next call of :func:`next_weights` performs an alignment solve."""
    return cfg.mode == "gradient-alignment" and (state.step + 1) % cfg.align_every == 0


def next_weights(state: BalancerState, losses, grads=None, cfg: BalancerConfig = BalancerConfig()) -> np.ndarray:
    """Advance the balancer by one training step and return the weights to use."""
    solve = needs_gradients(state, cfg)
    state.step += 1
    if cfg.mode == "awu":
        base = state.initial if cfg.anchor == "initial" else state.weights
        state.weights = awu_step(base, losses, cfg)
    elif solve:
        if grads is None:
            raise DataError(f"gradient-alignment step {state.step} needs task gradients")
        state.weights = optimal_weights(grads, cfg)
    state.history.append(state.weights.copy())
    return state.weights.copy()


class TaskBalancer(BaseEstimator):
    """Stateful wrapper exposing the balancer with an estimator-style API.

    Parameters mirror :class:`BalancerConfig`; ``initial_weights`` defaults to
    uniform.  After :meth:`partial_fit` the current weights are in ``weights_``.
    """

    def __init__(
        self,
        mode="awu",
        eta=0.1,
        eps=1e-8,
        lambda_reg=1e-3,
        sign="as-written",
        align_every=10,
        anchor="initial",
        initial_weights=None,
    ):
        self.mode = mode
        self.eta = eta
        self.eps = eps
        self.lambda_reg = lambda_reg
        self.sign = sign
        self.align_every = align_every
        self.anchor = anchor
        self.initial_weights = initial_weights

    @property
    def config(self) -> BalancerConfig:
        return BalancerConfig(
            mode=self.mode,
            eta=self.eta,
            eps=self.eps,
            lambda_reg=self.lambda_reg,
            sign=self.sign,
            align_every=self.align_every,
            anchor=self.anchor,
        )

    def reset(self) -> "TaskBalancer":
        self.state_ = init_state(self.initial_weights)
        self.weights_ = self.state_.weights.copy()
        return self

    def needs_gradients(self) -> bool:
        if not hasattr(self, "state_"):
            self.reset()
        return needs_gradients(self.state_, self.config)

    def partial_fit(self, losses: Sequence[float], grads=None) -> "TaskBalancer":
        if not hasattr(self, "state_"):
            self.reset()
        self.weights_ = next_weights(self.state_, losses, grads, self.config)
        return self

"""AdamW and the two learning-rate schedules.

The effective learning rate is ``base * gamma**epoch * plateau_factor**k``
where ``k`` counts plateau reductions so far: the exponential decay is
applied at the end of every epoch first, then the plateau rule looks at that
epoch's validation loss.
"""

from __future__ import annotations

from typing import Dict, Iterable, List, Optional

import numpy as np

from ..autodiff import Tensor
from .config import ExponentialConfig, OptimizerConfig, PlateauConfig


class AdamW:
    """Adam with decoupled weight decay; decay skips 1-D parameters (biases, norms)."""

    def __init__(self, params: Iterable[Tensor], cfg: OptimizerConfig = OptimizerConfig()):
        self.params: List[Tensor] = list(params)
        self.cfg = cfg
        self.lr = cfg.learning_rate
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        b1, b2 = self.cfg.betas
        self.t += 1
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if p.data.ndim > 1 and self.cfg.weight_decay:
                p.data *= 1.0 - self.lr * self.cfg.weight_decay
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.cfg.eps)

    def state_dict(self) -> Dict[str, object]:
        return {"t": self.t, "lr": self.lr}


class ExponentialLR:
    def __init__(self, cfg: ExponentialConfig = ExponentialConfig()):
        self.gamma = cfg.gamma

    def step(self, lr: float) -> float:
        return lr * self.gamma


class ReduceOnPlateau:
    """Multiply the rate by ``factor`` after ``patience`` epochs without relative improvement."""

    def __init__(self, cfg: PlateauConfig = PlateauConfig()):
        self.cfg = cfg
        self.best: Optional[float] = None
        self.bad_epochs = 0
        self.reductions = 0

    def step(self, lr: float, metric: float) -> float:
        if self.best is None or metric < self.best * (1.0 - self.cfg.threshold):
            self.best = metric
            self.bad_epochs = 0
            return lr
        self.bad_epochs += 1
        if self.bad_epochs > self.cfg.patience:
            self.bad_epochs = 0
            new = min(lr, max(lr * self.cfg.factor, self.cfg.min_lr))
            if new < lr:
                self.reductions += 1
            return new
        return lr


class LRSchedule:
    """Composition of the exponential and plateau schedules driving one optimizer."""

    def __init__(self, optimizer: AdamW, exponential: ExponentialLR, plateau: ReduceOnPlateau):
        self.optimizer = optimizer
        self.exponential = exponential
        self.plateau = plateau

    def epoch_end(self, val_loss: float) -> float:
        lr = self.exponential.step(self.optimizer.lr)
        lr = self.plateau.step(lr, val_loss)
        self.optimizer.lr = lr
        return lr

"""Adam with decoupled weight decay, the per-epoch decay schedule and early stopping."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from lobsrv.tensor import Tensor


def lr_at(epoch: int, lr0: float = 1e-3, gamma: float = 0.9) -> float:
    """Learning rate for 0-based ``epoch``: ``lr0 * gamma ** epoch``."""
    return lr0 * gamma**epoch


class AdamW:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            # decay acts on the weights directly, not through the moment estimates
            p.data = p.data * (1.0 - self.lr * self.weight_decay) - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


class EarlyStopping:
    """Tracks validation losses reported once per epoch (1-based).

    An epoch improves when its loss is below the best so far by at least
    ``min_delta``; ``update`` returns True once ``patience`` consecutive
    epochs have failed to improve.
    """

    def __init__(self, patience: int = 10, min_delta: float = 1e-5):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = 0
        self.epoch = 0
        self.stale = 0

    def update(self, loss: float) -> bool:
        if np.isnan(loss):
            raise FloatingPointError(f"validation RCLL is NaN at epoch {self.epoch + 1}")
        self.epoch += 1
        if loss < self.best - self.min_delta:
            self.best = float(loss)
            self.best_epoch = self.epoch
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch

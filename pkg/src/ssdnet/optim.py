"""First-order optimizers over :class:`~ssdnet.tensor.Parameter` lists."""

from __future__ import annotations

import math

import numpy as np


class SGD:
    def __init__(self, params, lr: float = 1e-3):
        self.params = list(params)
        self.lr = lr

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, params=None):
        for p in params if params is not None else self.params:
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad


class Adam:
    def __init__(self, params, lr: float = 5e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self._m = {id(p): np.zeros_like(p.data) for p in self.params}
        self._v = {id(p): np.zeros_like(p.data) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, params=None):
        """Update ``params`` (default: all) that carry a gradient."""
        self.t += 1
        b1, b2 = self.betas
        lr_t = self.lr * math.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for p in params if params is not None else self.params:
            if p.grad is None:
                continue
            m = self._m[id(p)] = b1 * self._m[id(p)] + (1 - b1) * p.grad
            v = self._v[id(p)] = b2 * self._v[id(p)] + (1 - b2) * p.grad * p.grad
            p.data = (p.data - lr_t * m / (np.sqrt(v) + self.eps)).astype(p.dtype)


def cosine_lr(base: float, epoch: int, total: int, floor: float = 0.05) -> float:
    """Cosine decay from ``base`` to ``floor * base`` over ``total`` epochs (1-based)."""
    frac = min(max(epoch - 1, 0) / max(total - 1, 1), 1.0)
    return base * (floor + (1 - floor) * 0.5 * (1 + math.cos(math.pi * frac)))

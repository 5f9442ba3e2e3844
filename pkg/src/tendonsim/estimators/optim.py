"""Adam optimizer and learning-rate schedule for the numpy layers."""

from __future__ import annotations

import math

import numpy as np


class Adam:
    """Standard Adam with bias correction, updating parameters in place."""

    def __init__(self, module, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.module = module
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in module.named_parameters()}
        self.v = {name: np.zeros_like(p) for name, p in module.named_parameters()}

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        grads = dict(self.module.named_grads())
        corr1 = 1.0 - self.beta1 ** self.t
        corr2 = 1.0 - self.beta2 ** self.t
        for name, p in self.module.named_parameters():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / corr1
            vhat = v / corr2
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)


def cosine_lr(step: int, total_steps: int, lr_max: float,
              lr_min_frac: float = 0.05) -> float:
    """Cosine decay from lr_max to lr_max * lr_min_frac over total_steps."""
    if total_steps <= 1:
        return lr_max
    frac = min(max(step / (total_steps - 1), 0.0), 1.0)
    lr_min = lr_max * lr_min_frac
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))

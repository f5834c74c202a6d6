"""Adaptive-moment optimizer with decoupled weight decay and stepped LR decay."""

from __future__ import annotations

import numpy as np

from .errors import OptimizerError
from .tensor import Tensor


class AdamW:
    """Bias-corrected adaptive moments; weight decay applied directly to params.

    The learning rate is multiplied by ``lr_decay_factor`` every
    ``lr_decay_epochs`` epochs (call ``set_epoch`` once per epoch).
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-2,
        lr_decay_factor: float = 0.8,
        lr_decay_epochs: int = 5,
    ):
        self.params = params
        self.base_lr = float(lr)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.lr_decay_factor = lr_decay_factor
        self.lr_decay_epochs = lr_decay_epochs
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def set_epoch(self, epoch: int):
        """Apply the stepped decay schedule for a 0-indexed epoch number."""
        if self.lr_decay_epochs > 0:
            self.lr = self.base_lr * self.lr_decay_factor ** (epoch // self.lr_decay_epochs)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise OptimizerError(f"non-finite gradient for parameter '{name}'")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            p.data -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data)

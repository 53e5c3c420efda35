"""
optim.py - Adam over named parameter tensors
"""

from typing import Dict

import numpy as np

from .tensor import Tensor


class Adam:
    """
    Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8 by default).

    Parameters whose .grad is None are skipped for that step.
    """

    def __init__(self, params: Dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"Learning rate must be positive, got {lr}")
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            # Parameters are replaced, never mutated in place
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

from __future__ import annotations

import numpy as np

from .params import ParamStore


class Adam:
    """Bias-corrected Adam with per-parameter moment state."""

    def __init__(self, params: ParamStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        self.t += 1
        adam_step(self.params, self.m, self.v, self.lr if lr is None else lr, self.t,
                  self.beta1, self.beta2, self.eps)


def adam_step(params: ParamStore, m: dict, v: dict, lr: float, t: int,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Update every parameter in place from its populated gradient."""
    if t < 1:
        raise ValueError(f"adam_step: step index must be >= 1, got {t}")
    missing = [n for n, p in params.items() if p.grad is None]
    if missing:
        raise ValueError(f"adam_step: missing gradients for {missing}")
    dt = next(iter(m.values())).dtype if m else np.float32
    b1, b2 = dt.type(beta1), dt.type(beta2)
    c1 = dt.type(1 - beta1 ** t)
    c2 = dt.type(1 - beta2 ** t)
    for name, p in params.items():
        g = p.grad
        m[name] = b1 * m[name] + (1 - b1) * g
        v[name] = b2 * v[name] + (1 - b2) * (g * g)
        mhat = m[name] / c1
        vhat = v[name] / c2
        p.data = (p.data - dt.type(lr) * mhat / (np.sqrt(vhat) + dt.type(eps))).astype(p.dtype)


def staircase_lr(base_lr: float, epoch: int, every: int = 10, factor: float = 0.1) -> float:
    """Learning rate for a 0-based epoch: base * factor ** (epoch // every)."""
    return base_lr * factor ** (epoch // every)

"""Adam updates and global gradient clipping for Parameter lists."""

from __future__ import annotations

import math

import numpy as np

from .nn import Parameter


def clip_grad_norm(params: list[Parameter], max_norm: float) -> float:
    """Scale all grads in place so their global L2 norm is at most max_norm.

    Returns the pre-clip norm. Parameters without grads are skipped.
    """
    sq = 0.0
    grads = []
    for p in params:
        g = p.tensor.grad
        if g is None:
            continue
        grads.append(p)
        sq += float(np.vdot(g, g).real)
    norm = math.sqrt(sq)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in grads:
            p.tensor.grad = p.tensor.grad * scale
    return norm


def adam_step(params: list[Parameter], grads: list[np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; moment buffers live on the Parameter."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if g is None:
            continue
        if g.shape != p.tensor.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.tensor.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in adam_step")
        if p.moment1 is None:
            p.moment1 = np.zeros_like(p.tensor.data)
            p.moment2 = np.zeros_like(p.tensor.data)
        p.steps += 1
        p.moment1 = beta1 * p.moment1 + (1.0 - beta1) * g
        p.moment2 = beta2 * p.moment2 + (1.0 - beta2) * (g * g)
        m_hat = p.moment1 / (1.0 - beta1 ** p.steps)
        v_hat = p.moment2 / (1.0 - beta2 ** p.steps)
        p.tensor.data = p.tensor.data - (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(
            p.tensor.dtype)


class Adam:
    """Convenience wrapper reading grads straight off the parameters."""

    def __init__(self, params: list[Parameter], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self) -> None:
        live = [p for p in self.params if p.tensor.grad is not None]
        adam_step(live, [p.tensor.grad for p in live], self.lr,
                  self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

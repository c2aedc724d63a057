"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import NonFiniteError, Tensor

DEFAULT_BETAS = (0.9, 0.999)
DEFAULT_EPS = 1e-8
DEFAULT_WEIGHT_DECAY = 0.01


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray | None], lr: float,
               state: AdamState, betas=DEFAULT_BETAS, eps: float = DEFAULT_EPS,
               weight_decay: float = DEFAULT_WEIGHT_DECAY, group: str = "params") -> AdamState:
    """One AdamW update over ``params`` (replaces each ``.data`` array).

    ``grads`` maps the same names to gradient arrays; a missing or ``None``
    gradient is treated as zero.  Bias-corrected moments, then
    ``p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)``.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    b1, b2 = betas
    for name, g in grads.items():
        if g is not None and not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient in group '{group}' (parameter '{name}')")
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for '{name}'")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        new = p.data - lr * weight_decay * p.data - lr * update
        p.data = new.astype(p.data.dtype, copy=False)
    return state


class AdamW:
    """Small stateful wrapper used by the training loop."""

    def __init__(self, params: Mapping[str, Tensor], lr: float, betas=DEFAULT_BETAS,
                 eps: float = DEFAULT_EPS, weight_decay: float = DEFAULT_WEIGHT_DECAY,
                 group: str = "params"):
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.group = group
        self.state = AdamState()

    def step(self) -> None:
        grads = {n: p.grad for n, p in self.params.items()}
        adamw_step(self.params, grads, self.lr, self.state, self.betas, self.eps,
                   self.weight_decay, self.group)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

"""Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import NumericalError, Parameter


@dataclass
class AdamState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, t: int,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new parameter arrays and state."""
    if t < 1:
        raise ValueError(f"step counter must be >= 1, got {t}")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient passed to adam_step")
    if not state.m:
        state = AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)
    new_params, ms, vs = [], [], []
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_params.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        ms.append(m)
        vs.append(v)
    return new_params, AdamState(ms, vs, t)


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new, self.state = adam_step([p.data for p in self.params], grads, self.state,
                                    self.state.t + 1, self.lr, self.beta1, self.beta2, self.eps)
        for p, value in zip(self.params, new):
            p.assign(value)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

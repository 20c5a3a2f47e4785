"""AdamW with decoupled weight decay and a NaN/Inf gradient guard."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    def __init__(self, params: dict[str, Tensor], lr: float = 3e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.state = OptimizerState(lr, betas[0], betas[1], eps, weight_decay)
        self.skipped_steps = 0

    @property
    def lr(self) -> float:
        return self.state.learning_rate

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.learning_rate = value

    def step(self, grads: dict[str, np.ndarray] | None = None) -> bool:
        """Apply one update; returns False (step skipped) on non-finite grads."""
        s = self.state
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        for name, g in grads.items():
            if g is not None and not np.all(np.isfinite(g)):
                self.skipped_steps += 1
                return False
        s.step_count += 1
        bc1 = 1.0 - s.beta1 ** s.step_count
        bc2 = 1.0 - s.beta2 ** s.step_count
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ValueError(f"grad shape {g.shape} != param shape {p.data.shape} for {name}")
            m = s.m.get(name)
            if m is None:
                m = s.m[name] = np.zeros_like(p.data)
                s.v[name] = np.zeros_like(p.data)
            v = s.v[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + s.epsilon)
            if s.weight_decay:
                p.data -= s.learning_rate * s.weight_decay * p.data
            p.data -= s.learning_rate * update
        return True

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

"""SGD with momentum and inverse-time learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor


@dataclass
class OptimizerState:
    base_lr: float = 0.001
    momentum: float = 0.9
    decay: float = 0.9
    step_count: int = 0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def learning_rate(self) -> float:
        return self.base_lr / (1.0 + self.decay * self.step_count)


def sgd_step(params: dict[str, Tensor], grads: dict[str, np.ndarray] | None,
             state: OptimizerState) -> dict[str, Tensor]:
    """Apply one momentum update in place and return ``params``.

    ``grads`` defaults to each parameter's accumulated ``.grad``; a parameter
    without a gradient is treated as having zero gradient.
    """
    lr = state.learning_rate()
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        elif v.shape != p.shape:
            raise ShapeError(f"velocity for {name!r} has shape {v.shape}, parameter {p.shape}")
        v = state.momentum * v - lr * g
        state.velocity[name] = v
        p.data = p.data + v
    state.step_count += 1
    return params

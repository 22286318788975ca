from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class RmsPropState:
    """RMSprop hyperparameters plus one squared-gradient average per parameter."""

    learning_rate: float = 1e-3
    rho: float = 0.9
    epsilon: float = 1e-8
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


def rmsprop_step(state: RmsPropState, params: list[tuple[str, Tensor]], grads=None) -> None:
    """Update ``params`` in place.

    v <- rho * v + (1 - rho) * g**2
    theta <- theta - lr * g / (sqrt(v) + eps)

    ``grads`` defaults to each tensor's ``.grad``. Every gradient is checked
    before any parameter moves, so a rejected step leaves the model intact.
    """
    if grads is None:
        grads = [w.grad if w.grad is not None else np.zeros_like(w.data) for _, w in params]
    if len(grads) != len(params):
        raise ValueError(f"{len(grads)} gradients for {len(params)} parameters")
    for (name, w), g in zip(params, grads):
        if g.shape != w.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} vs parameter shape {w.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        acc = state.accumulators.get(name)
        if acc is not None and acc.shape != w.shape:
            raise ValueError(f"{name}: accumulator shape {acc.shape} vs parameter shape {w.shape}")
    rho, lr, eps = state.rho, state.learning_rate, state.epsilon
    for (name, w), g in zip(params, grads):
        v = state.accumulators.get(name)
        if v is None:
            v = state.accumulators[name] = np.zeros_like(w.data)
        v *= rho
        v += (1.0 - rho) * g * g
        w.data -= lr * g / (np.sqrt(v) + eps)

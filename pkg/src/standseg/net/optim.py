"""Adam with bias correction, operating on named parameter dicts in place."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError
from .unet import ModelParams


@dataclass(frozen=True)
class TrainConfig:
    """Loop settings. The hyperparameter search draws batch sizes from
    {4, 8, 16}; smaller values are allowed for desk-sized runs."""

    learning_rate: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.patience < self.max_epochs:
            raise ValueError(
                f"patience must satisfy 0 < patience < max_epochs, got {self.patience}/{self.max_epochs}"
            )
        for name in ("adam_beta1", "adam_beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {v}")
        if self.adam_eps <= 0.0:
            raise ValueError(f"adam_eps must be > 0, got {self.adam_eps}")


@dataclass(eq=False)
class AdamState:
    """First/second moment buffers, lazily created per tensor at first use."""

    m: ModelParams = field(default_factory=dict)
    v: ModelParams = field(default_factory=dict)
    t: int = 0


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected update: theta -= lr * m_hat / (sqrt(v_hat) + eps)."""
    state.t += 1
    t = state.t
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    for name, theta in params.items():
        g = grads[name]
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for tensor {name!r} at step {t}")
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        theta -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)

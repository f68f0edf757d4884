"""Exponential-moving-average loss normalization for two-task training.

Each task loss is divided by its own EMA so both contribute at comparable
scale. EMA values are plain floats: they are constants for gradient
purposes, so the joint gradient is exactly
lambda_u / EMA_u * grad(L_u) + lambda_g / EMA_g * grad(L_g).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import torch

EMA_DECAY_DEFAULT = 0.99


@dataclass(frozen=True)
class EmaState:
    decay: float = EMA_DECAY_DEFAULT
    values: dict = field(default_factory=dict)  # task -> positive float
    steps: dict = field(default_factory=dict)  # task -> update count

    def value(self, task: str) -> float:
        if task not in self.values:
            raise ValueError(f"EMA for task {task!r} is uninitialized")
        return self.values[task]


def ema_update(state: EmaState, task: str, loss_value: float) -> EmaState:
    """Fold one observed loss into the task's EMA.

    The first observation initializes the EMA to the loss itself;
    afterwards ema <- decay * ema + (1 - decay) * loss.

    Raises:
        RuntimeError: non-finite loss (training must abort, not average it).
    """
    loss_value = float(loss_value)
    if not math.isfinite(loss_value) or loss_value < 0.0:
        raise RuntimeError(f"non-finite or negative loss for task {task!r}: {loss_value}")
    values = dict(state.values)
    steps = dict(state.steps)
    if task not in values:
        values[task] = loss_value
    else:
        values[task] = state.decay * values[task] + (1.0 - state.decay) * loss_value
    steps[task] = steps.get(task, 0) + 1
    return replace(state, values=values, steps=steps)


def joint_loss(
    loss_u: torch.Tensor,
    loss_g: torch.Tensor,
    state: EmaState,
    lambda_u: float = 1.0,
    lambda_g: float = 1.0,
) -> torch.Tensor:
    """lambda_u * L_u / EMA_u + lambda_g * L_g / EMA_g.

    EMA values enter as detached floats, so no gradient flows through the
    normalizers.

    Raises:
        ValueError: when either task's EMA has never been updated.
    """
    ema_u = state.value("understand")
    ema_g = state.value("generate")
    return lambda_u * loss_u / ema_u + lambda_g * loss_g / ema_g

"""Low-rank adapters over frozen linear maps.

The effective map is ``base + (alpha / r) * B @ A`` with A (r x d_in)
randomly initialized, B (d_out x r) zero-initialized, so the adapted layer
equals the base layer exactly until training moves B.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class LoRALinear(nn.Module):
    """Frozen linear layer plus a trainable rank-r update."""

    def __init__(self, in_features: int, out_features: int, rank: int, alpha: float):
        super().__init__()
        if rank >= min(in_features, out_features):
            raise ValueError(
                f"adapter rank {rank} must be < min(d_in, d_out) = {min(in_features, out_features)}"
            )
        self.base = nn.Linear(in_features, out_features)
        self.base.weight.requires_grad_(False)
        self.base.bias.requires_grad_(False)
        self.rank = rank
        self.alpha = alpha
        self.lora_a = nn.Parameter(torch.empty(rank, in_features))
        self.lora_b = nn.Parameter(torch.zeros(out_features, rank))
        nn.init.normal_(self.lora_a, std=0.02)

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scale * F.linear(F.linear(x, self.lora_a), self.lora_b)

    def merged_weight(self) -> torch.Tensor:
        """base weight + (alpha / r) * B @ A, for merge-equivalence checks."""
        return self.base.weight + self.scale * (self.lora_b @ self.lora_a)


def merged_weight(base: torch.Tensor, a: torch.Tensor, b: torch.Tensor, alpha: float, rank: int) -> torch.Tensor:
    """Standalone form of the effective-weight contract."""
    if rank >= min(base.shape):
        raise ValueError(f"adapter rank {rank} must be < min{tuple(base.shape)}")
    return base + (alpha / rank) * (b @ a)

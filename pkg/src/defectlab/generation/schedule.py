"""Linear-beta diffusion schedule with cumulative products.

``alpha_bar`` is indexed 0..T with ``alpha_bar[0] = 1`` (the identity,
no noise) and is strictly decreasing.
"""

from __future__ import annotations

import torch


class DiffusionSchedule:
    def __init__(self, steps: int = 200, beta_start: float = 1e-4, beta_end: float = 0.02):
        if not (0.0 < beta_start < beta_end < 1.0):
            raise ValueError(f"betas must satisfy 0 < {beta_start} < {beta_end} < 1")
        self.steps = steps
        self.betas = torch.linspace(beta_start, beta_end, steps, dtype=torch.float64)
        alphas = 1.0 - self.betas
        self.alpha_bar = torch.cat([torch.ones(1, dtype=torch.float64), torch.cumprod(alphas, dim=0)])
        if not bool((self.alpha_bar[1:] < self.alpha_bar[:-1]).all()):
            raise ValueError("alpha_bar must be strictly decreasing")

    def noise_to(self, x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
        """q(x_t | x_0): sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, t in 0..T."""
        abar = self.alpha_bar.to(x0.dtype)[t].reshape(-1, *([1] * (x0.dim() - 1)))
        return torch.sqrt(abar) * x0 + torch.sqrt(1.0 - abar) * eps

    def sampling_timesteps(self, n: int) -> list[int]:
        """n strided timesteps from T down to 1."""
        if not 1 <= n <= self.steps:
            raise ValueError(f"need 1 <= sampling steps <= {self.steps}, got {n}")
        ts = torch.linspace(self.steps, 1, n).round().long().tolist()
        out = []
        for t in ts:  # de-duplicate while preserving descending order
            if not out or t < out[-1]:
                out.append(int(t))
        return out

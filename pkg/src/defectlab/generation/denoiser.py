"""Mask-conditioned denoising U-Net.

Input is the channel concatenation noisy(3) + edit mask(1) + source(3);
the timestep enters through a sinusoidal embedding added per residual
block, and the conditioning sequence enters through cross-attention at
the bottleneck resolution. The output head is zero-initialized so the
initial noise prediction is exactly zero.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import ArchConfig

IN_CHANNELS = 7  # noisy 3 + mask 1 + source 3


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.double()[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, t_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(8, c_in), c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.t_proj = nn.Linear(t_dim, c_out)
        self.norm2 = nn.GroupNorm(min(8, c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.t_proj(t_emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class BottleneckCrossAttention(nn.Module):
    """Spatial positions attend over the conditioning sequence."""

    def __init__(self, channels: int, cond_dim: int, heads: int = 4):
        super().__init__()
        self.norm = nn.GroupNorm(min(8, channels), channels)
        self.q = nn.Linear(channels, channels)
        self.k = nn.Linear(cond_dim, channels)
        self.v = nn.Linear(cond_dim, channels)
        self.out = nn.Linear(channels, channels)
        self.heads = heads
        self.dh = channels // heads

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)  # B x hw x C

        def split(t):
            return t.reshape(b, -1, self.heads, self.dh).transpose(1, 2)

        q = split(self.q(tokens))
        k = split(self.k(cond))
        v = split(self.v(cond))
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.dh), dim=-1)
        ctx = (attn @ v).transpose(1, 2).reshape(b, h * w, c)
        ctx = self.out(ctx).transpose(1, 2).reshape(b, c, h, w)
        return x + ctx


class Denoiser(nn.Module):
    """Three-resolution U-Net predicting the injected noise."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        c1, c2, c3 = cfg.unet_channels
        t_dim = 4 * c1
        self.t_dim = t_dim
        self.t_mlp = nn.Sequential(nn.Linear(t_dim, t_dim), nn.SiLU(), nn.Linear(t_dim, t_dim))
        self.in_conv = nn.Conv2d(IN_CHANNELS, c1, 3, padding=1)

        self.down1 = ResBlock(c1, c1, t_dim)
        self.pool1 = nn.Conv2d(c1, c1, 3, stride=2, padding=1)
        self.down2 = ResBlock(c1, c2, t_dim)
        self.pool2 = nn.Conv2d(c2, c2, 3, stride=2, padding=1)
        self.mid1 = ResBlock(c2, c3, t_dim)
        self.cross = BottleneckCrossAttention(c3, cfg.cond_dim)
        self.mid2 = ResBlock(c3, c3, t_dim)

        self.up2 = nn.Conv2d(c3, c2, 3, padding=1)
        self.dec2 = ResBlock(2 * c2, c2, t_dim)
        self.up1 = nn.Conv2d(c2, c1, 3, padding=1)
        self.dec1 = ResBlock(2 * c1, c1, t_dim)

        self.out_norm = nn.GroupNorm(min(8, c1), c1)
        self.out_conv = nn.Conv2d(c1, 3, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(
        self,
        noisy: torch.Tensor,
        t: torch.Tensor,
        edit_mask: torch.Tensor,
        source: torch.Tensor,
        cond: torch.Tensor,
    ) -> torch.Tensor:
        """
        Args:
            noisy: B x 3 x H x W noised target.
            t: B integer timesteps.
            edit_mask: B x 1 x H x W (or B x H x W) binary mask.
            source: B x 3 x H x W source image channels.
            cond: B x N x d_cond conditioning sequence.

        Returns:
            Predicted noise, B x 3 x H x W.
        """
        if edit_mask.dim() == 3:
            edit_mask = edit_mask[:, None]
        x = torch.cat([noisy, edit_mask.to(noisy.dtype), source], dim=1)
        if x.shape[1] != IN_CHANNELS:
            raise ValueError(f"expected {IN_CHANNELS} input channels, got {x.shape[1]}")
        t_emb = self.t_mlp(timestep_embedding(t, self.t_dim).to(noisy.dtype))

        h1 = self.down1(self.in_conv(x), t_emb)
        h2 = self.down2(self.pool1(h1), t_emb)
        hm = self.mid1(self.pool2(h2), t_emb)
        hm = self.cross(hm, cond)
        hm = self.mid2(hm, t_emb)

        u2 = F.interpolate(hm, scale_factor=2, mode="nearest")
        u2 = self.dec2(torch.cat([self.up2(u2), h2], dim=1), t_emb)
        u1 = F.interpolate(u2, scale_factor=2, mode="nearest")
        u1 = self.dec1(torch.cat([self.up1(u1), h1], dim=1), t_emb)
        return self.out_conv(F.silu(self.out_norm(u1)))

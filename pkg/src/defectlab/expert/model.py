"""Segmentation expert architecture.

A small ViT-style patch encoder exposes feature taps at four evenly spaced
depths; the taps are channel-projected, fused top-down FPN-style, gated by
a single-channel spatial attention map, and decoded to a full-resolution
probability mask through four decoder stages. The fused, attention-weighted
map (pre-decoder) doubles as the dense feature output consumed by the
region interface.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import ArchConfig


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class PatchEncoder(nn.Module):
    """Patch embedding plus transformer blocks with intermediate taps."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.patch = cfg.expert_patch
        self.grid = cfg.image_size // cfg.expert_patch
        self.embed = nn.Conv2d(3, cfg.expert_dim, kernel_size=self.patch, stride=self.patch)
        self.pos = nn.Parameter(torch.zeros(1, self.grid * self.grid, cfg.expert_dim))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.expert_dim, cfg.expert_heads) for _ in range(cfg.expert_depth)
        )
        self.taps = tuple(cfg.expert_taps)
        if max(self.taps) > cfg.expert_depth:
            raise ValueError(f"tap depth {max(self.taps)} exceeds encoder depth {cfg.expert_depth}")

    def forward(self, image: torch.Tensor) -> list[torch.Tensor]:
        """Return the tap activations, each B x n_patches x dim."""
        if image.shape[-1] % self.patch or image.shape[-2] % self.patch:
            raise ValueError(f"spatial size {tuple(image.shape[-2:])} not divisible by patch {self.patch}")
        x = self.embed(image).flatten(2).transpose(1, 2) + self.pos
        taps = []
        for depth, block in enumerate(self.blocks, start=1):
            x = block(x)
            if depth in self.taps:
                taps.append(x)
        return taps


class FpnFusion(nn.Module):
    """Top-down fusion of four same-channel feature maps.

    The deeper map is upsampled to the shallower map's resolution, added to
    the shallower map's lateral projection, and smoothed with a 3x3
    convolution; the output lives at the shallowest tap's resolution.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.laterals = nn.ModuleList(nn.Conv2d(channels, channels, 1) for _ in range(4))
        self.smooths = nn.ModuleList(nn.Conv2d(channels, channels, 3, padding=1) for _ in range(3))

    def forward(self, taps: list[torch.Tensor]) -> torch.Tensor:
        if len(taps) != 4:
            raise ValueError(f"expected 4 feature taps, got {len(taps)}")
        x = self.laterals[3](taps[3])
        for i in (2, 1, 0):
            if x.shape[-2:] != taps[i].shape[-2:]:
                x = F.interpolate(x, size=taps[i].shape[-2:], mode="bilinear", align_corners=False)
            x = x + self.laterals[i](taps[i])
            x = self.smooths[i](x)
        return x


class SpatialAttention(nn.Module):
    """Single-channel sigmoid gate broadcast over channels."""

    def __init__(self, channels: int):
        super().__init__()
        self.gate = nn.Conv2d(channels, 1, 3, padding=1)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        return fused * torch.sigmoid(self.gate(fused))


class Decoder(nn.Module):
    """Four-stage decoder: three x2 upsampling stages plus a full-resolution
    refinement stage, ending in a 1x1 sigmoid head."""

    def __init__(self, in_channels: int, stage_channels: tuple[int, ...]):
        super().__init__()
        if len(stage_channels) != 4:
            raise ValueError("decoder needs 4 stage channel counts")
        chans = [in_channels, *stage_channels]
        self.convs = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], 3, padding=1) for i in range(4)
        )
        self.norms = nn.ModuleList(
            nn.GroupNorm(min(8, chans[i + 1]), chans[i + 1]) for i in range(4)
        )
        self.head = nn.Conv2d(chans[-1], 1, 1)
        nn.init.constant_(self.head.bias, -2.0)  # start near the background prior

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            if i < 3:
                x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = F.gelu(norm(conv(x)))
        return torch.sigmoid(self.head(x)).squeeze(1)


class RegionExpert(nn.Module):
    """Full expert: image in, (probability mask, dense features) out."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = PatchEncoder(cfg)
        self.tap_proj = nn.ModuleList(
            nn.Linear(cfg.expert_dim, cfg.fpn_channels) for _ in range(4)
        )
        self.fpn = FpnFusion(cfg.fpn_channels)
        self.attention = SpatialAttention(cfg.fpn_channels)
        self.decoder = Decoder(cfg.fpn_channels, cfg.decoder_channels)

    def forward(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """
        Args:
            image: B x 3 x H x W in [0, 1], H and W divisible by the patch size.

        Returns:
            (probs B x H x W, features B x C x h x w) where h = H / patch.
        """
        gh = image.shape[-2] // self.encoder.patch
        gw = image.shape[-1] // self.encoder.patch
        taps = self.encoder(image)
        maps = [
            proj(t).transpose(1, 2).reshape(t.shape[0], -1, gh, gw)
            for proj, t in zip(self.tap_proj, taps)
        ]
        fused = self.fpn(maps)
        feats = self.attention(fused)
        probs = self.decoder(feats)
        return probs, feats

    @torch.no_grad()
    def predict(self, image_np) -> tuple:
        """Single-image numpy convenience wrapper (H x W x 3 in [0, 1])."""
        import numpy as np

        was_training = self.training
        self.eval()
        x = torch.from_numpy(np.ascontiguousarray(image_np, dtype=np.float32)).permute(2, 0, 1)[None]
        x = x.to(next(self.parameters()).dtype)
        probs, feats = self.forward(x)
        if was_training:
            self.train()
        return probs[0].cpu().numpy(), feats[0].cpu().numpy()


def seg_loss(probs: torch.Tensor, gt_mask: torch.Tensor, eps: float = 1.0) -> torch.Tensor:
    """Binary cross-entropy plus (1 - soft Dice) on probability masks.

    soft Dice = (2 sum(p g) + eps) / (sum(p) + sum(g) + eps) with eps = 1.

    Args:
        probs: predicted probabilities, any shape.
        gt_mask: same-shape {0,1} targets.
    """
    if probs.shape != gt_mask.shape:
        raise ValueError(f"shape mismatch: {tuple(probs.shape)} vs {tuple(gt_mask.shape)}")
    g = gt_mask.to(probs.dtype)
    p = probs.clamp(1e-7, 1.0 - 1e-7)
    bce = -(g * torch.log(p) + (1.0 - g) * torch.log(1.0 - p)).mean()
    dice = (2.0 * (p * g).sum() + eps) / (p.sum() + g.sum() + eps)
    return bce + (1.0 - dice)

"""Connector from backbone hidden states at the metaquery positions to
denoiser cross-attention conditioning.

A small bidirectional transformer encoder with learned positional
embeddings (so it is intentionally NOT permutation invariant), followed
by a projection into the conditioning dimension.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from ..config import ArchConfig


class _EncoderLayer(nn.Module):
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


class Connector(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.n = cfg.metaquery_count
        self.pos = nn.Parameter(torch.empty(1, self.n, cfg.d_backbone))
        nn.init.normal_(self.pos, std=0.02)
        self.layers = nn.ModuleList(
            _EncoderLayer(cfg.d_backbone, cfg.connector_heads) for _ in range(cfg.connector_layers)
        )
        self.out = nn.Linear(cfg.d_backbone, cfg.cond_dim)
        self.out_norm = nn.LayerNorm(cfg.cond_dim)

    def forward(self, hidden_at_metaquery: torch.Tensor) -> torch.Tensor:
        """B x N x d_backbone (or N x d_backbone) -> B x N x d_cond."""
        squeeze = hidden_at_metaquery.dim() == 2
        x = hidden_at_metaquery[None] if squeeze else hidden_at_metaquery
        if x.shape[-2] != self.n:
            raise ValueError(f"expected {self.n} metaquery rows, got {x.shape[-2]}")
        x = x + self.pos
        for layer in self.layers:
            x = layer(x)
        h = self.out_norm(self.out(x))
        return h[0] if squeeze else h

"""Region interface: the shared cross-task currency.

Turns expert outputs into K learnable-query region tokens (cross-attention
over the mask-weighted feature map), a six-element geometry summary, and
backbone-dimension projections for the understanding and generation
branches plus the geometry token. Evidence can be built in four inference
modes (oracle / predicted / full_image / none) without retraining.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ArchConfig
from .metrics.masks import binarize

EVIDENCE_MODES = ("oracle", "predicted", "full_image", "none")


class GeometryVector(NamedTuple):
    """Normalized centroid, bbox extents, area ratio, and confidence."""

    cx: float
    cy: float
    w: float
    h: float
    a: float
    s: float

    @classmethod
    def degenerate(cls) -> "GeometryVector":
        return cls(0.5, 0.5, 0.0, 0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


def geometry_summary(prob_mask: np.ndarray) -> GeometryVector:
    """Geometry of a probability mask, binarized at 0.5.

    Centroids are normalized by (W-1, H-1) so corner pixels map to exactly
    0 and 1; bbox extents and area by W, H; confidence is the mean
    probability over positive pixels. An empty mask yields the degenerate
    form (0.5, 0.5, 0, 0, 0, 0).
    """
    probs = np.asarray(prob_mask, dtype=np.float64)
    mask = binarize(probs)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return GeometryVector.degenerate()
    hh, ww = mask.shape
    return GeometryVector(
        cx=float(cols.mean() / (ww - 1)),
        cy=float(rows.mean() / (hh - 1)),
        w=float((cols.max() - cols.min() + 1) / ww),
        h=float((rows.max() - rows.min() + 1) / hh),
        a=float(rows.size / (hh * ww)),
        s=float(probs[mask].mean()),
    )


@dataclass
class RegionEvidence:
    """K region tokens + geometry + the mode they were produced under."""

    tokens: torch.Tensor  # K x d
    geometry: GeometryVector
    mode: str

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "geometry": list(self.geometry),
            "tokens": self.tokens.detach().cpu().numpy().tolist(),
        }

    @classmethod
    def from_json(cls, raw: dict) -> "RegionEvidence":
        return cls(
            tokens=torch.tensor(raw["tokens"], dtype=torch.float32),
            geometry=GeometryVector(*raw["geometry"]),
            mode=raw["mode"],
        )


class RegionCrossAttention(nn.Module):
    """One multi-head cross-attention layer: learnable queries over the
    mask-weighted feature map. No positional terms on the keys, so the
    output is invariant to permutations of the spatial positions."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.k = cfg.region_tokens
        self.d = cfg.region_dim
        self.heads = cfg.region_heads
        self.queries = nn.Parameter(torch.empty(self.k, self.d))
        nn.init.trunc_normal_(self.queries, std=0.02)
        self.q_proj = nn.Linear(self.d, self.d)
        self.k_proj = nn.Linear(cfg.fpn_channels, self.d)
        self.v_proj = nn.Linear(cfg.fpn_channels, self.d)
        self.out_proj = nn.Linear(self.d, self.d)

    def forward(self, prob_mask: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
        """
        Args:
            prob_mask: B x H x W probabilities at image resolution (average-
                pooled down to the feature resolution before weighting).
            features: B x C x h x w dense features.

        Returns:
            B x K x d region tokens.
        """
        b, c, h, w = features.shape
        hh, ww = prob_mask.shape[-2:]
        if hh % h or ww % w:
            raise ValueError(f"mask {hh}x{ww} is not an integer multiple of features {h}x{w}")
        m = F.avg_pool2d(prob_mask[:, None].to(features.dtype), kernel_size=(hh // h, ww // w))
        weighted = (m * features).flatten(2).transpose(1, 2)  # B x hw x C

        q = self.q_proj(self.queries).expand(b, self.k, self.d)
        k = self.k_proj(weighted)
        v = self.v_proj(weighted)
        dh = self.d // self.heads

        def split(t):
            return t.reshape(b, -1, self.heads, dh).transpose(1, 2)

        attn = torch.softmax(split(q) @ split(k).transpose(-1, -2) / math.sqrt(dh), dim=-1)
        out = (attn @ split(v)).transpose(1, 2).reshape(b, self.k, self.d)
        return self.out_proj(out)


class TokenProjector(nn.Module):
    """Two-layer GELU MLP with output layer normalization."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, out_dim)
        self.fc2 = nn.Linear(out_dim, out_dim)
        self.norm = nn.LayerNorm(out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.norm(self.fc2(F.gelu(self.fc1(x))))


class RegionInterface(nn.Module):
    """Cross-attention tokenizer plus the three task projections."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.cfg = cfg
        self.cross_attn = RegionCrossAttention(cfg)
        self.project_understand = TokenProjector(cfg.region_dim, cfg.d_backbone)
        self.project_generate = TokenProjector(cfg.region_dim, cfg.d_backbone)
        self.project_geometry = TokenProjector(6, cfg.d_backbone)

    def region_tokens(self, prob_mask: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
        return self.cross_attn(prob_mask, features)

    def payload(self, tokens: torch.Tensor, geometry: torch.Tensor, branch: str) -> torch.Tensor:
        """Stack the K projected region rows and the geometry row.

        Args:
            tokens: B x K x d (or K x d) region tokens.
            geometry: B x 6 (or 6) geometry vectors.
            branch: "understand" or "generate".

        Returns:
            B x (K+1) x d_backbone payload, region rows first.
        """
        squeeze = tokens.dim() == 2
        if squeeze:
            tokens = tokens[None]
            geometry = geometry[None]
        proj = {"understand": self.project_understand, "generate": self.project_generate}[branch]
        rows = proj(tokens)
        geom_row = self.project_geometry(geometry.to(rows.dtype))[:, None]
        out = torch.cat([rows, geom_row], dim=1)
        return out[0] if squeeze else out


def make_evidence(
    image: np.ndarray,
    mode: str,
    expert,
    interface: RegionInterface,
    gt_mask: np.ndarray | None = None,
) -> RegionEvidence:
    """Build region evidence for one image under the given inference mode.

    oracle: ground-truth mask as the probability map, confidence forced
    to 1 (empty masks stay degenerate); predicted: the expert's own mask;
    full_image: an all-ones mask; none: zero tokens + degenerate geometry.

    Raises:
        ValueError: unknown mode, or oracle without a ground-truth mask.
    """
    if mode not in EVIDENCE_MODES:
        raise ValueError(f"unknown evidence mode {mode!r}")
    if mode == "none":
        k, d = interface.cfg.region_tokens, interface.cfg.region_dim
        return RegionEvidence(torch.zeros(k, d), GeometryVector.degenerate(), mode)

    batch = evidence_batch(
        np.asarray(image)[None],
        [mode],
        expert,
        interface,
        None if gt_mask is None else np.asarray(gt_mask)[None],
    )
    return RegionEvidence(batch.tokens[0], batch.geometry_list[0], mode)


@dataclass
class EvidenceBatch:
    tokens: torch.Tensor  # B x K x d
    geometry: torch.Tensor  # B x 6
    geometry_list: list[GeometryVector]
    modes: list[str]


def evidence_batch(
    images: np.ndarray,
    modes: list[str],
    expert,
    interface: RegionInterface,
    gt_masks: np.ndarray | None = None,
) -> EvidenceBatch:
    """Vectorized :func:`make_evidence` over a batch of images.

    The expert runs once (frozen, no grad); the cross-attention and the
    projections stay on the autograd tape so interface parameters train.
    """
    n = len(modes)
    if images.shape[0] != n:
        raise ValueError("one image per mode required")
    for i, mode in enumerate(modes):
        if mode not in EVIDENCE_MODES:
            raise ValueError(f"unknown evidence mode {mode!r}")
        if mode == "oracle" and (gt_masks is None or gt_masks[i] is None):
            raise ValueError("oracle evidence requires a ground-truth mask")

    dtype = next(interface.parameters()).dtype
    x = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32)).permute(0, 3, 1, 2)
    with torch.no_grad():
        probs_pred, feats = expert(x.to(dtype))
    hh, ww = images.shape[1:3]

    prob_rows = []
    geoms: list[GeometryVector] = []
    for i, mode in enumerate(modes):
        if mode == "oracle":
            pm = np.ascontiguousarray(gt_masks[i], dtype=np.float64)
            g = geometry_summary(pm)
            if g.a > 0.0:
                g = g._replace(s=1.0)
        elif mode == "predicted":
            pm = probs_pred[i].cpu().numpy().astype(np.float64)
            g = geometry_summary(pm)
        elif mode == "full_image":
            pm = np.ones((hh, ww), dtype=np.float64)
            g = geometry_summary(pm)
        else:  # none
            pm = np.zeros((hh, ww), dtype=np.float64)
            g = GeometryVector.degenerate()
        prob_rows.append(torch.from_numpy(pm))
        geoms.append(g)

    prob_t = torch.stack(prob_rows).to(dtype)
    tokens = interface.region_tokens(prob_t, feats.detach())
    none_idx = [i for i, m in enumerate(modes) if m == "none"]
    if none_idx:
        keep = torch.ones(n, 1, 1, dtype=dtype)
        keep[none_idx] = 0.0
        tokens = tokens * keep
    geometry = torch.tensor([list(g) for g in geoms], dtype=dtype)
    return EvidenceBatch(tokens=tokens, geometry=geometry, geometry_list=geoms, modes=list(modes))

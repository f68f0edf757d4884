"""Decoder-only transformer backbone with rotary positions and adapters.

The base transformer weights and the visual patch encoder are frozen at
initialization; capacity for the tasks comes from the trainable token
embeddings (tied to the output head) and the low-rank adapters on every
attention and MLP linear. Region evidence enters by replacing the
placeholder-token embedding rows in place, after position assignment, so
injection never disturbs positions or any other row.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import ArchConfig
from .lora import LoRALinear
from .prompts import TokenSequence
from .vocab import Vocabulary


def apply_rope(x: torch.Tensor, positions: torch.Tensor, base: float = 10000.0) -> torch.Tensor:
    """Rotate feature pairs of `x` by position-dependent angles.

    Args:
        x: (..., seq, dh) with dh even; pairs are (even, odd) channels.
        positions: (seq,) integer positions.

    Returns:
        Same-shape tensor with pair i at position p rotated by
        p * base^(-2i/dh).
    """
    dh = x.shape[-1]
    if dh % 2:
        raise ValueError("rotary dimension must be even")
    inv_freq = base ** (-torch.arange(0, dh, 2, dtype=x.dtype, device=x.device) / dh)
    angles = positions.to(x.dtype)[:, None] * inv_freq[None, :]  # seq x dh/2
    cos, sin = torch.cos(angles), torch.sin(angles)
    x1, x2 = x[..., 0::2], x[..., 1::2]
    out = torch.empty_like(x)
    out[..., 0::2] = x1 * cos - x2 * sin
    out[..., 1::2] = x1 * sin + x2 * cos
    return out


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        d, r, a = cfg.d_backbone, cfg.lora_rank, cfg.lora_alpha
        self.heads = cfg.backbone_heads
        self.dh = d // self.heads
        self.q = LoRALinear(d, d, r, a)
        self.k = LoRALinear(d, d, r, a)
        self.v = LoRALinear(d, d, r, a)
        self.out = LoRALinear(d, d, r, a)

    def forward(self, x: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        b, length, d = x.shape

        def split(t):
            return t.reshape(b, length, self.heads, self.dh).transpose(1, 2)

        q = apply_rope(split(self.q(x)), positions)
        k = apply_rope(split(self.k(x)), positions)
        v = split(self.v(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.dh)
        causal = torch.triu(torch.ones(length, length, dtype=torch.bool, device=x.device), 1)
        scores = scores.masked_fill(causal, float("-inf"))
        ctx = (torch.softmax(scores, dim=-1) @ v).transpose(1, 2).reshape(b, length, d)
        return self.out(ctx)


class Block(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        d, r, a = cfg.d_backbone, cfg.lora_rank, cfg.lora_alpha
        self.norm1 = nn.LayerNorm(d)
        self.attn = CausalSelfAttention(cfg)
        self.norm2 = nn.LayerNorm(d)
        self.fc1 = LoRALinear(d, 4 * d, r, a)
        self.fc2 = LoRALinear(4 * d, d, r, a)

    def forward(self, x: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x), positions)
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class MetaqueryEmbedding(nn.Module):
    """Trainable embeddings spliced into the metaquery span of generation
    prompts; owned by the generation branch, not the base vocabulary table."""

    def __init__(self, count: int, dim: int):
        super().__init__()
        self.rows = nn.Parameter(torch.empty(count, dim))
        nn.init.normal_(self.rows, std=0.02)

    def forward(self) -> torch.Tensor:
        return self.rows


def inject_region_tokens(
    embeddings: torch.Tensor,
    placeholder_positions: list[int],
    payload: torch.Tensor,
) -> torch.Tensor:
    """Replace the placeholder rows with the projected region payload.

    Rows are replaced in template order (K region rows then the geometry
    row); every other row is returned bitwise unchanged, and position
    indices are untouched by construction.

    Args:
        embeddings: B x L x d (or L x d).
        placeholder_positions: strictly increasing row indices.
        payload: B x (K+1) x d (or (K+1) x d) replacement rows.

    Raises:
        ValueError: when the payload row count differs from the number of
            placeholder positions.
    """
    squeeze = embeddings.dim() == 2
    if squeeze:
        embeddings = embeddings[None]
        payload = payload[None]
    if payload.shape[-2] != len(placeholder_positions):
        raise ValueError(
            f"payload has {payload.shape[-2]} rows for {len(placeholder_positions)} placeholders"
        )
    out = embeddings.clone()
    out[:, list(placeholder_positions)] = payload.to(out.dtype)
    return out[0] if squeeze else out


class Backbone(nn.Module):
    """Embedding table, frozen visual pathway, adapter-wrapped blocks, and
    a weight-tied output head."""

    def __init__(self, cfg: ArchConfig, vocab: Vocabulary):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.tok_embed = nn.Embedding(len(vocab), cfg.d_backbone)
        nn.init.normal_(self.tok_embed.weight, std=0.02)
        self.patch_encoder = nn.Conv2d(
            3, cfg.d_backbone, kernel_size=cfg.backbone_patch, stride=cfg.backbone_patch
        )
        for p in self.patch_encoder.parameters():  # native visual pathway stays frozen
            p.requires_grad_(False)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.backbone_layers))
        self.final_norm = nn.LayerNorm(cfg.d_backbone)
        for p in self.final_norm.parameters():
            p.requires_grad_(False)

    @property
    def n_visual(self) -> int:
        return (self.cfg.image_size // self.cfg.backbone_patch) ** 2

    def visual_tokens(self, images: torch.Tensor) -> torch.Tensor:
        """B x 3 x H x W -> B x n_visual x d via the frozen patch encoder."""
        return self.patch_encoder(images).flatten(2).transpose(1, 2)

    def embed_sequence(
        self,
        ids: torch.Tensor,
        image_span: tuple[int, int] | None = None,
        visual: torch.Tensor | None = None,
        metaquery_span: tuple[int, int] | None = None,
        metaquery: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Token embeddings with visual / metaquery rows spliced in.

        Args:
            ids: B x L (or L) token ids.
            image_span: [start, end) span to receive `visual` rows.
            visual: B x n x d visual tokens; n must equal the span length.
            metaquery_span / metaquery: same contract for metaquery rows.
        """
        squeeze = ids.dim() == 1
        if squeeze:
            ids = ids[None]
        x = self.tok_embed(ids)

        def splice(rows: torch.Tensor, span: tuple[int, int], what: str) -> torch.Tensor:
            start, end = span
            if rows.dim() == 2:
                rows = rows[None]
            if rows.shape[0] == 1 and x.shape[0] > 1:
                rows = rows.expand(x.shape[0], -1, -1)
            if rows.shape[-2] != end - start:
                raise ValueError(f"{what} span of {end - start} tokens, got {rows.shape[-2]}")
            return torch.cat([x[:, :start], rows.to(x.dtype), x[:, end:]], dim=1)

        if image_span is not None:
            if visual is None:
                raise ValueError("image span without visual tokens")
            x = splice(visual, image_span, "image")
        elif visual is not None:
            raise ValueError("visual tokens supplied without an image span")
        if metaquery_span is not None:
            if metaquery is None:
                raise ValueError("metaquery span without metaquery embeddings")
            x = splice(metaquery, metaquery_span, "metaquery")
        return x[0] if squeeze else x

    def forward(self, embeddings: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Hidden states and next-token logits at every position.

        Raises:
            ValueError: when the sequence exceeds the configured max length.
        """
        squeeze = embeddings.dim() == 2
        if squeeze:
            embeddings = embeddings[None]
        length = embeddings.shape[1]
        if length > self.cfg.max_len:
            raise ValueError(f"sequence length {length} exceeds max length {self.cfg.max_len}")
        positions = torch.arange(length, device=embeddings.device)
        x = embeddings
        for block in self.blocks:
            x = block(x, positions)
        hidden = self.final_norm(x)
        logits = F.linear(hidden, self.tok_embed.weight)  # weight-tied head
        if squeeze:
            return hidden[0], logits[0]
        return hidden, logits

    @torch.no_grad()
    def generate(
        self,
        seq: TokenSequence,
        visual: torch.Tensor | None,
        payload: torch.Tensor | None,
        max_new: int,
    ) -> str:
        """Greedy decoding of one prompt; stops at <eos> or max_new tokens."""
        ids = list(seq.ids[: seq.prompt_len])
        out: list[int] = []
        for _ in range(max_new):
            x = self.embed_sequence(
                torch.tensor(ids, dtype=torch.long), image_span=seq.image_span, visual=visual
            )
            if payload is not None and seq.placeholder_positions:
                x = inject_region_tokens(x, seq.placeholder_positions, payload)
            _, logits = self.forward(x)
            nxt = int(torch.argmax(logits[-1]))
            if nxt == self.vocab.eos_id:
                break
            ids.append(nxt)
            out.append(nxt)
        return self.vocab.decode_words(out)

    @torch.no_grad()
    def generate_batch(
        self,
        seqs: list[TokenSequence],
        visual: torch.Tensor | None,
        payloads: torch.Tensor | None,
        max_new: int,
    ) -> list[str]:
        """Greedy decoding of same-shape prompts in one batch.

        All prompts must share length and marked positions (same template).
        Matches per-prompt :meth:`generate` up to accumulation tolerance.
        """
        first = seqs[0]
        if any(
            s.prompt_len != first.prompt_len
            or s.placeholder_positions != first.placeholder_positions
            or s.image_span != first.image_span
            for s in seqs
        ):
            raise ValueError("batched generation requires identically shaped prompts")
        ids = torch.tensor([s.ids[: s.prompt_len] for s in seqs], dtype=torch.long)
        finished = torch.zeros(len(seqs), dtype=torch.bool)
        outputs: list[list[int]] = [[] for _ in seqs]
        for _ in range(max_new):
            x = self.embed_sequence(ids, image_span=first.image_span, visual=visual)
            if payloads is not None and first.placeholder_positions:
                x = inject_region_tokens(x, first.placeholder_positions, payloads)
            _, logits = self.forward(x)
            nxt = torch.argmax(logits[:, -1], dim=-1)
            finished |= nxt == self.vocab.eos_id
            for i in range(len(seqs)):
                if not finished[i]:
                    outputs[i].append(int(nxt[i]))
            if bool(finished.all()):
                break
            # finished rows keep decoding on pad; their outputs are frozen
            nxt = torch.where(finished, torch.full_like(nxt, self.vocab.pad_id), nxt)
            ids = torch.cat([ids, nxt[:, None]], dim=1)
        return [self.vocab.decode_words(o) for o in outputs]

"""Conditioning assembly, the denoising training objective, and ancestral
sampling for mask-guided inpainting.

Conditioning follows one path for training and inference: the generation
prompt (instruction + metaquery slots, optionally the mask-overlay image
span and the region placeholders) runs through the backbone; hidden states
at the metaquery positions pass through the connector. The sampler runs
from pure noise for a fixed number of strided steps and never composites
source pixels directly, so background PSNR measures what the model
actually learned to preserve.
"""

from __future__ import annotations

import numpy as np
import torch

from ..backbone.model import inject_region_tokens
from ..region import evidence_batch
from ..synthbench.defects import render_overlay


def conditioning_batch(
    model,
    sources: np.ndarray,
    masks: np.ndarray,
    instructions: list[str],
    *,
    visual: bool = True,
    region: bool = True,
) -> torch.Tensor:
    """h_gen for a batch of (source, edit mask, instruction) triples.

    All instructions must tokenize to the same length (callers group
    batches accordingly). ``visual=False`` drops the overlay image span
    from the prompt (text-only conditioning); ``region=False`` drops the
    region placeholders.

    Returns:
        B x N x d_cond conditioning.
    """
    n = len(instructions)
    seqs = [
        model.prompts.build(
            "generation",
            has_region=region,
            has_image=visual,
            n_image=model.backbone.n_visual,
            instruction=instr,
        )
        for instr in instructions
    ]
    first = seqs[0]
    if any(len(s.ids) != len(first.ids) or s.metaquery_span != first.metaquery_span for s in seqs):
        raise ValueError("conditioning batch requires equal-length instructions")

    ids = torch.tensor([s.ids for s in seqs], dtype=torch.long)
    visual_tokens = None
    if visual:
        overlays = np.stack([render_overlay(sources[i], masks[i]) for i in range(n)])
        visual_tokens = model.backbone.visual_tokens(model.images_to_tensor(overlays))
    x = model.backbone.embed_sequence(
        ids,
        image_span=first.image_span,
        visual=visual_tokens,
        metaquery_span=first.metaquery_span,
        metaquery=model.mq_embed(),
    )
    if region:
        ev = evidence_batch(sources, ["oracle"] * n, model.expert, model.interface, masks)
        payload = model.interface.payload(ev.tokens, ev.geometry, "generate")
        x = inject_region_tokens(x, first.placeholder_positions, payload)
    hidden, _ = model.backbone.forward(x)
    start, end = first.metaquery_span
    return model.connector(hidden[:, start:end])


def diffusion_loss(
    model,
    clean_target: torch.Tensor,
    edit_mask: torch.Tensor,
    source: torch.Tensor,
    h_gen: torch.Tensor,
    generator: torch.Generator,
) -> torch.Tensor:
    """Standard denoising objective.

    Draw t ~ U{1..T} and eps ~ N(0, 1), noise the target to x_t, and return
    the mean squared error between eps and the denoiser's prediction.
    """
    b = clean_target.shape[0]
    t = torch.randint(1, model.schedule.steps + 1, (b,), generator=generator)
    eps = torch.randn(clean_target.shape, generator=generator, dtype=clean_target.dtype)
    x_t = model.schedule.noise_to(clean_target, t, eps)
    pred = model.denoiser(x_t, t, edit_mask, source, h_gen)
    return ((pred - eps) ** 2).mean()


@torch.no_grad()
def inpaint_batch(
    model,
    sources: np.ndarray,
    masks: np.ndarray,
    instructions: list[str],
    *,
    steps: int | None = None,
    seed: int = 0,
    visual: bool = True,
    region: bool = True,
) -> np.ndarray:
    """Sample edited images for a batch of inputs.

    Ancestral sampling from pure noise over `steps` strided timesteps; the
    x0 estimate is clipped to [0, 1] each step and the final output is
    clipped to [0, 1]. Deterministic for a fixed seed.

    Raises:
        RuntimeError: when the generation components have not been trained.
    """
    if "denoiser" not in model.trained_components:
        raise RuntimeError(
            "inpainting requires a trained generation checkpoint; "
            "this model's denoiser has not been trained"
        )
    steps = steps if steps is not None else model.arch.sample_steps
    h_gen = conditioning_batch(model, sources, masks, instructions, visual=visual, region=region)

    src = model.images_to_tensor(sources)
    m = torch.from_numpy(np.ascontiguousarray(masks)).to(src.dtype)
    gen = torch.Generator().manual_seed(seed)
    abar = model.schedule.alpha_bar

    x = torch.randn(src.shape, generator=gen, dtype=src.dtype)
    ts = model.schedule.sampling_timesteps(steps)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        at, ap = float(abar[t]), float(abar[t_prev])
        t_batch = torch.full((src.shape[0],), t, dtype=torch.long)
        eps_hat = model.denoiser(x, t_batch, m, src, h_gen)
        x0_hat = ((x - np.sqrt(1.0 - at) * eps_hat) / np.sqrt(at)).clamp(0.0, 1.0)
        if t_prev == 0:
            x = x0_hat
            break
        var = (1.0 - ap) / (1.0 - at) * (1.0 - at / ap)
        noise = torch.randn(x.shape, generator=gen, dtype=x.dtype)
        x = (
            np.sqrt(ap) * x0_hat
            + np.sqrt(max(1.0 - ap - var, 0.0)) * eps_hat
            + np.sqrt(var) * noise
        )
    out = x.clamp(0.0, 1.0).permute(0, 2, 3, 1).numpy()
    return out.astype(np.float64)


def inpaint(
    model,
    source: np.ndarray,
    edit_mask: np.ndarray,
    instruction: str,
    *,
    steps: int | None = None,
    seed: int = 0,
    visual: bool = True,
    region: bool = True,
) -> np.ndarray:
    """Single-image wrapper over :func:`inpaint_batch`."""
    out = inpaint_batch(
        model,
        np.asarray(source)[None],
        np.asarray(edit_mask)[None],
        [instruction],
        steps=steps,
        seed=seed,
        visual=visual,
        region=region,
    )
    return out[0]

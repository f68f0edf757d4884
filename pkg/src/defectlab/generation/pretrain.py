"""Three-stage generation pretraining curriculum.

Stage 1 (editing alignment): synthetic recolor / brightness / flip edits
with text-only instructions and no region tokens. Stage 2 (restoration):
the target is the clean image, the source hides a random blob, still
text-only. Stage 3 (defect inpainting): clean source, defective target,
ground-truth mask, with overlay visual conditioning and region tokens.
Each stage starts from the previous stage's checkpoint and trains only
the connector, the denoiser, and the metaquery embeddings.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch

from ..config import GenStageConfig
from ..models import UnifiedModel
from ..seeding import rng_for, seed_everything, torch_generator
from ..synthbench.dataset import DatasetManifest, load_split
from ..synthbench.editing import make_editing_pair, _region
from .pipeline import conditioning_batch, diffusion_loss

log = logging.getLogger(__name__)

STAGE2_INSTRUCTION = "restore the marked region"


def _stage_seed(seed: int, rec_id: str) -> int:
    import hashlib

    return int.from_bytes(hashlib.sha256(f"{seed}/{rec_id}/edit".encode()).digest()[:8], "big")


def _grouped_batches(groups: dict, batch_size: int, rng: np.random.Generator) -> list:
    batches = []
    for key in sorted(groups):
        idx = np.array(groups[key])
        idx = idx[rng.permutation(len(idx))]
        for start in range(0, len(idx), batch_size):
            batches.append((key, idx[start : start + batch_size]))
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


class _StageData:
    """Per-stage sample tensors and instruction grouping."""

    def __init__(self, stage: int, records, seed: int, image_size: int):
        self.stage = stage
        self.records = records
        self.seed = seed
        self.image_size = image_size
        if stage == 1:
            pairs = [make_editing_pair(r.clean, _stage_seed(seed, r.id)) for r in records]
            self.sources = np.stack([p[0] for p in pairs])
            self.targets = np.stack([p[1] for p in pairs])
            self.masks = np.stack([p[2] for p in pairs])
            self.instructions = [p[3] for p in pairs]
        elif stage == 3:
            self.sources = np.stack([r.clean for r in records])
            self.targets = np.stack([r.image for r in records])
            self.masks = np.stack([r.mask for r in records])
            self.instructions = [
                f"add a {r.defect_type} defect in the marked region" for r in records
            ]
        else:  # stage 2: masks drawn per epoch
            self.sources = np.stack([r.clean for r in records])
            self.targets = self.sources
            self.masks = None
            self.instructions = [STAGE2_INSTRUCTION] * len(records)

    def epoch_masks(self, epoch: int) -> np.ndarray:
        masks = []
        for rec in self.records:
            rng = rng_for(self.seed, "restoration-mask", epoch, rec.id)
            m = _region(rng, self.image_size)
            masks.append(m)
        return np.stack(masks)

    def groups(self) -> dict:
        out: dict[int, list[int]] = {}
        for i, instr in enumerate(self.instructions):
            out.setdefault(len(instr.split()), []).append(i)
        return out


def run_pretraining_stage(
    manifest: DatasetManifest, cfg: GenStageConfig, out_path: str | Path
) -> Path:
    """Train one pretraining stage and persist the bundle checkpoint.

    Raises:
        FileNotFoundError: stage > 1 without the predecessor checkpoint, or
            stage 3 without an expert checkpoint.
        RuntimeError: non-finite training loss.
    """
    if cfg.stage > 1:
        if not cfg.prev_ckpt:
            raise FileNotFoundError(f"stage {cfg.stage} requires the stage {cfg.stage - 1} checkpoint")
        model, meta = UnifiedModel.load(cfg.prev_ckpt)
        if meta.get("stage") != cfg.stage - 1:
            raise FileNotFoundError(
                f"stage {cfg.stage} must load a stage {cfg.stage - 1} checkpoint, "
                f"got {meta.get('stage')!r} from {cfg.prev_ckpt}"
            )
        seed_everything(cfg.seed)
    else:
        model = UnifiedModel(cfg.arch, cfg.seed)
    if cfg.stage == 3:
        if not cfg.expert_ckpt:
            raise FileNotFoundError("stage 3 requires a trained region-expert checkpoint")
        model.load_expert_checkpoint(cfg.expert_ckpt)

    records = load_split(manifest, "train")
    if cfg.stage == 3:
        records = [r for r in records if r.anomalous]
    data = _StageData(cfg.stage, records, cfg.seed, manifest.image_size)

    params = model.parameters_for("generation")
    opt = torch.optim.AdamW(params, lr=cfg.lr)
    gen = torch_generator(cfg.seed, "diffusion", cfg.stage)
    use_visual = cfg.stage == 3

    epoch_means: list[float] = []
    for epoch in range(cfg.epochs):
        rng = rng_for(cfg.seed, "gen-shuffle", cfg.stage, epoch)
        masks = data.masks if data.masks is not None else data.epoch_masks(epoch)
        sources = data.sources if cfg.stage != 2 else np.where(masks[..., None], 0.0, data.sources)
        losses = []
        for _, idx in _grouped_batches(data.groups(), cfg.batch_size, rng):
            h_gen = conditioning_batch(
                model,
                sources[idx],
                masks[idx],
                [data.instructions[i] for i in idx],
                visual=use_visual,
                region=use_visual,
            )
            target = model.images_to_tensor(data.targets[idx])
            source = model.images_to_tensor(sources[idx])
            mask_t = torch.from_numpy(np.ascontiguousarray(masks[idx])).float()
            loss = diffusion_loss(model, target, mask_t, source, h_gen, gen)
            if not torch.isfinite(loss):
                raise RuntimeError(f"stage {cfg.stage} diverged at epoch {epoch}: loss={loss.item()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        epoch_means.append(float(np.mean(losses)))
        log.info("gen stage %d epoch %d/%d loss %.4f", cfg.stage, epoch + 1, cfg.epochs, epoch_means[-1])

    model.trained_components |= {"connector", "denoiser", "mq_embed"}
    model.eval_mode()
    meta = {
        "stage": cfg.stage,
        "epoch_loss_first": epoch_means[0],
        "epoch_loss_final": epoch_means[-1],
        "epoch_losses": epoch_means,
    }
    return model.save(out_path, kind="generation", extra_meta=meta)

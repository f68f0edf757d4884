"""Segmentation pretraining and evaluation for the region expert."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch

from ..checkpoints import save_checkpoint
from ..config import ExpertTrainConfig, config_to_dict
from ..metrics.masks import binarize, mask_metrics
from ..seeding import rng_for, seed_everything
from ..synthbench.dataset import DatasetManifest, SampleRecord, load_split
from .model import RegionExpert, seg_loss

log = logging.getLogger(__name__)


def _to_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_region_expert(
    manifest: DatasetManifest, cfg: ExpertTrainConfig, out_path: str | Path
) -> Path:
    """Train the expert on the train split and persist a frozen checkpoint.

    Raises:
        RuntimeError: if the loss becomes non-finite (divergence).
    """
    seed_everything(cfg.seed)
    model = RegionExpert(cfg.arch)
    records = load_split(manifest, "train")
    images = torch.from_numpy(np.stack([r.image for r in records])).permute(0, 3, 1, 2)
    masks = torch.from_numpy(np.stack([r.mask for r in records])).float()

    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr)
    model.train()
    final_loss = float("nan")
    for epoch in range(cfg.epochs):
        rng = rng_for(cfg.seed, "expert-shuffle", epoch)
        epoch_losses = []
        for idx in _to_batches(len(records), cfg.batch_size, rng):
            sel = torch.from_numpy(idx)
            probs, _ = model(images[sel])
            loss = seg_loss(probs, masks[sel])
            if not torch.isfinite(loss):
                raise RuntimeError(f"segmentation training diverged at epoch {epoch}: loss={loss.item()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(loss.item())
        final_loss = float(np.mean(epoch_losses))
        log.info("expert epoch %d/%d loss %.4f", epoch + 1, cfg.epochs, final_loss)

    model.eval()
    meta = {
        "kind": "region_expert",
        "seed": cfg.seed,
        "config": config_to_dict(cfg),
        "frozen": True,
        "frozen_params": sorted(name for name, _ in model.named_parameters()),
        "final_loss": final_loss,
    }
    return save_checkpoint(out_path, {"expert": model.state_dict()}, meta)


def load_expert(ckpt_path: str | Path) -> RegionExpert:
    """Load a frozen expert from its checkpoint (eval mode, grads off)."""
    from ..checkpoints import load_checkpoint
    from ..config import ArchConfig

    states, meta = load_checkpoint(ckpt_path)
    arch = ArchConfig(**{k: tuple(v) if isinstance(v, list) else v
                         for k, v in meta["config"]["arch"].items()})
    model = RegionExpert(arch)
    model.load_state_dict(states["expert"])
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def eval_segmentation(model: RegionExpert, records: list[SampleRecord]) -> list[dict]:
    """Per-sample Dice/IoU/precision/recall rows for a list of records."""
    rows = []
    for rec in records:
        probs, _ = model.predict(rec.image)
        m = mask_metrics(binarize(probs), rec.mask)
        rows.append(
            {
                "id": rec.id,
                "dice": m["dice"],
                "iou": m["iou"],
                "precision": m["precision"],
                "recall": m["recall"],
            }
        )
    return rows

"""Unified training over the shared backbone, in four strategy variants.

gt_only: understanding trained on oracle evidence alone.
gt_to_predicted: per-sample probability of predicted evidence ramps
linearly from 0 to 1 over the epochs.
stage_wise: all understanding epochs, then all generation epochs.
joint_preinit: both objectives every step, combined by the EMA-normalized
joint loss, with understanding evidence mixed oracle/predicted.

The region expert is frozen throughout; the backbone trains only through
its adapters and token embeddings. Understanding batches are grouped per
task so prompts in a batch share their structure; answer tails are padded
and masked out of the loss.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..backbone.model import inject_region_tokens
from ..backbone.prompts import TokenSequence
from ..checkpoints import file_sha256
from ..config import UnifiedTrainConfig
from ..generation.pipeline import conditioning_batch, diffusion_loss
from ..models import UnifiedModel
from ..region import evidence_batch
from ..seeding import rng_for, seed_everything, torch_generator
from ..synthbench.dataset import DatasetManifest, SampleRecord, load_split
from .ema import EmaState, ema_update, joint_loss

log = logging.getLogger(__name__)

UNDERSTANDING_TASKS = ("location", "analysis", "decision", "defect_type")


def valid_tasks(record: SampleRecord) -> tuple[str, ...]:
    if record.anomalous:
        return UNDERSTANDING_TASKS
    return ("analysis", "decision")


def understanding_loss(
    logits: torch.Tensor,
    labels: torch.Tensor,
    prompt_lens: torch.Tensor,
    lengths: torch.Tensor,
) -> torch.Tensor:
    """Token-level cross-entropy on answer positions only.

    A label at position p is predicted from the logits at p - 1; positions
    before prompt_len and at/after the true length contribute nothing.
    """
    pred = logits[:, :-1]
    targets = labels[:, 1:]
    positions = torch.arange(1, labels.shape[1], device=labels.device)[None]
    mask = (positions >= prompt_lens[:, None]) & (positions < lengths[:, None])
    if not bool(mask.any()):
        raise ValueError("no answer positions in batch")
    return F.cross_entropy(pred[mask], targets[mask])


@dataclass
class UnderstandingBatch:
    task: str
    records: list[SampleRecord]
    seq: TokenSequence  # shared prompt structure (first row's)
    ids: torch.Tensor  # B x L padded
    prompt_lens: torch.Tensor
    lengths: torch.Tensor


def build_understanding_batch(model: UnifiedModel, records: list[SampleRecord], task: str) -> UnderstandingBatch:
    seqs = [
        model.prompts.build(
            task,
            has_region=True,
            has_image=True,
            n_image=model.backbone.n_visual,
            answer=rec.answers[task],
        )
        for rec in records
    ]
    max_len = max(len(s.ids) for s in seqs)
    pad = model.vocab.pad_id
    ids = torch.full((len(seqs), max_len), pad, dtype=torch.long)
    for i, s in enumerate(seqs):
        ids[i, : len(s.ids)] = torch.tensor(s.ids, dtype=torch.long)
    return UnderstandingBatch(
        task=task,
        records=records,
        seq=seqs[0],
        ids=ids,
        prompt_lens=torch.tensor([s.prompt_len for s in seqs]),
        lengths=torch.tensor([len(s.ids) for s in seqs]),
    )


def understanding_step_loss(model: UnifiedModel, batch: UnderstandingBatch, modes: list[str]) -> torch.Tensor:
    images = np.stack([r.image for r in batch.records])
    gt_masks = np.stack([r.mask for r in batch.records])
    ev = evidence_batch(images, modes, model.expert, model.interface, gt_masks)
    payload = model.interface.payload(ev.tokens, ev.geometry, "understand")
    visual = model.backbone.visual_tokens(model.images_to_tensor(images))
    x = model.backbone.embed_sequence(batch.ids, image_span=batch.seq.image_span, visual=visual)
    x = inject_region_tokens(x, batch.seq.placeholder_positions, payload)
    _, logits = model.backbone.forward(x)
    return understanding_loss(logits, batch.ids, batch.prompt_lens, batch.lengths)


def _understanding_epoch_batches(
    model: UnifiedModel, records: list[SampleRecord], batch_size: int, rng: np.random.Generator
) -> list[UnderstandingBatch]:
    per_task: dict[str, list[int]] = {t: [] for t in UNDERSTANDING_TASKS}
    for i, rec in enumerate(records):
        for task in valid_tasks(rec):
            per_task[task].append(i)
    batches = []
    for task in UNDERSTANDING_TASKS:
        idx = np.array(per_task[task])
        idx = idx[rng.permutation(len(idx))]
        for start in range(0, len(idx), batch_size):
            sel = idx[start : start + batch_size]
            batches.append(build_understanding_batch(model, [records[i] for i in sel], task))
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def _pick_modes(strategy: str, n: int, epoch: int, epochs: int, oracle_mix: float, rng) -> list[str]:
    if strategy == "gt_only":
        return ["oracle"] * n
    if strategy == "gt_to_predicted":
        p_pred = 1.0 if epochs <= 1 else epoch / (epochs - 1)
        return ["predicted" if rng.random() < p_pred else "oracle" for _ in range(n)]
    return ["oracle" if rng.random() < oracle_mix else "predicted" for _ in range(n)]


class _GenBatcher:
    """Deterministic cyclic batches over the defect-inpainting pairing."""

    def __init__(self, records: list[SampleRecord], batch_size: int, seed: int):
        self.records = [r for r in records if r.anomalous]
        self.batch_size = batch_size
        self.seed = seed
        self.cycle = 0
        self._queue: list[np.ndarray] = []

    def _refill(self) -> None:
        rng = rng_for(self.seed, "unified-gen", self.cycle)
        idx = rng.permutation(len(self.records))
        self._queue = [
            idx[s : s + self.batch_size] for s in range(0, len(idx), self.batch_size)
        ]
        self.cycle += 1

    def next(self):
        if not self._queue:
            self._refill()
        sel = self._queue.pop(0)
        recs = [self.records[i] for i in sel]
        return (
            np.stack([r.clean for r in recs]),
            np.stack([r.image for r in recs]),
            np.stack([r.mask for r in recs]),
            [f"add a {r.defect_type} defect in the marked region" for r in recs],
        )


def _generation_step_loss(model: UnifiedModel, batcher: _GenBatcher, gen: torch.Generator) -> torch.Tensor:
    sources, targets, masks, instructions = batcher.next()
    h_gen = conditioning_batch(model, sources, masks, instructions, visual=True, region=True)
    return diffusion_loss(
        model,
        model.images_to_tensor(targets),
        torch.from_numpy(np.ascontiguousarray(masks)).float(),
        model.images_to_tensor(sources),
        h_gen,
        gen,
    )


def run_unified_training(
    manifest: DatasetManifest,
    cfg: UnifiedTrainConfig,
    out_path: str | Path,
    loss_log_path: str | Path | None = None,
) -> Path:
    """Train one strategy variant and persist the bundle checkpoint.

    Raises:
        FileNotFoundError: missing expert checkpoint, or missing stage-3
            generation checkpoint for strategies that train generation.
        RuntimeError: non-finite loss.
    """
    trains_generation = cfg.strategy in ("stage_wise", "joint_preinit")
    if not cfg.expert_ckpt:
        raise FileNotFoundError("unified training requires a region-expert checkpoint (expert_ckpt)")
    if trains_generation and not cfg.gen_ckpt:
        raise FileNotFoundError(
            f"strategy {cfg.strategy!r} requires the stage-3 generation checkpoint (gen_ckpt)"
        )

    if trains_generation:
        model, meta = UnifiedModel.load(cfg.gen_ckpt)
        if meta.get("stage") != 3:
            raise FileNotFoundError(
                f"gen_ckpt must be a stage-3 checkpoint, got stage {meta.get('stage')!r} from {cfg.gen_ckpt}"
            )
        seed_everything(cfg.seed)
    else:
        model = UnifiedModel(cfg.arch, cfg.seed)
    model.load_expert_checkpoint(cfg.expert_ckpt)

    records = load_split(manifest, "train")
    log_rows: list[dict] = []
    first_epoch_losses: list[float] = []
    step = 0

    def run_understanding_phase(epochs: int, joint: bool) -> None:
        nonlocal step
        params = model.parameters_for("unified" if joint else "understanding_only")
        opt = torch.optim.AdamW(params, lr=cfg.lr)
        batcher = _GenBatcher(records, cfg.gen_batch_size, cfg.seed) if joint else None
        gen = torch_generator(cfg.seed, "unified-diffusion") if joint else None
        ema = EmaState(decay=cfg.ema_decay)
        for epoch in range(epochs):
            rng = rng_for(cfg.seed, "unified-und", epoch)
            mode_rng = rng_for(cfg.seed, "unified-evidence", epoch)
            for batch in _understanding_epoch_batches(model, records, cfg.batch_size, rng):
                modes = _pick_modes(
                    cfg.strategy, len(batch.records), epoch, epochs, cfg.oracle_mix, mode_rng
                )
                l_u = understanding_step_loss(model, batch, modes)
                if not torch.isfinite(l_u):
                    raise RuntimeError(f"understanding loss diverged at step {step}")
                row = {"step": step, "l_u": l_u.item(), "l_g": "", "ema_u": "", "ema_g": "", "l_joint": ""}
                if joint:
                    l_g = _generation_step_loss(model, batcher, gen)
                    if not torch.isfinite(l_g):
                        raise RuntimeError(f"generation loss diverged at step {step}")
                    ema = ema_update(ema, "understand", l_u.item())
                    ema = ema_update(ema, "generate", l_g.item())
                    total = joint_loss(l_u, l_g, ema, cfg.lambda_u, cfg.lambda_g)
                    row.update(
                        l_g=l_g.item(),
                        ema_u=ema.value("understand"),
                        ema_g=ema.value("generate"),
                        l_joint=total.item(),
                    )
                else:
                    total = l_u
                opt.zero_grad()
                total.backward()
                opt.step()
                if epoch == 0:
                    first_epoch_losses.append(l_u.item())
                log_rows.append(row)
                step += 1
            log.info("unified[%s] understanding epoch %d/%d", cfg.strategy, epoch + 1, epochs)

    def run_generation_phase(epochs: int) -> None:
        nonlocal step
        opt = torch.optim.AdamW(model.parameters_for("generation"), lr=cfg.lr)
        batcher = _GenBatcher(records, cfg.gen_batch_size, cfg.seed)
        gen = torch_generator(cfg.seed, "unified-diffusion")
        n_anom = sum(1 for r in records if r.anomalous)
        steps_per_epoch = max(1, (n_anom + cfg.gen_batch_size - 1) // cfg.gen_batch_size)
        for epoch in range(epochs):
            for _ in range(steps_per_epoch):
                l_g = _generation_step_loss(model, batcher, gen)
                if not torch.isfinite(l_g):
                    raise RuntimeError(f"generation loss diverged at step {step}")
                opt.zero_grad()
                l_g.backward()
                opt.step()
                log_rows.append(
                    {"step": step, "l_u": "", "l_g": l_g.item(), "ema_u": "", "ema_g": "", "l_joint": ""}
                )
                step += 1
            log.info("unified[%s] generation epoch %d/%d", cfg.strategy, epoch + 1, epochs)

    if cfg.strategy == "joint_preinit":
        run_understanding_phase(cfg.epochs, joint=True)
    elif cfg.strategy == "stage_wise":
        run_understanding_phase(cfg.epochs, joint=False)
        run_generation_phase(cfg.epochs)
    else:  # gt_only / gt_to_predicted: understanding branch only
        run_understanding_phase(cfg.epochs, joint=False)

    model.trained_components |= {"backbone", "interface"}
    if trains_generation:
        model.trained_components |= {"connector", "denoiser", "mq_embed"}
    model.eval_mode()

    if loss_log_path is not None:
        loss_log_path = Path(loss_log_path)
        loss_log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(loss_log_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=["step", "l_u", "l_g", "ema_u", "ema_g", "l_joint"])
            writer.writeheader()
            writer.writerows(log_rows)

    meta = {
        "strategy": cfg.strategy,
        "epochs": cfg.epochs,
        "expert_ckpt_sha256": file_sha256(Path(cfg.expert_ckpt).with_suffix(".pt"))
        if Path(cfg.expert_ckpt).with_suffix(".pt").exists()
        else file_sha256(cfg.expert_ckpt),
        "first_epoch_losses": first_epoch_losses,
        "steps": step,
    }
    return model.save(out_path, kind="unified", extra_meta=meta)

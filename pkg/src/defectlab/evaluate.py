"""Evaluation driver: turns a checkpoint plus a data split into a
:class:`MetricsReport`.

Understanding is scored from greedy decodes (strict open-ended parsing:
an answer counts only when exactly one candidate phrase appears);
segmentation from the frozen expert's binarized masks; generation from
inpainted samples against the real defective images. All decoding and
sampling is seeded, so re-running an evaluation reproduces the report
byte for byte.
"""

from __future__ import annotations

import hashlib
import logging

import numpy as np
import torch

from .metrics.images import psnr_decomposed, ssim_masked, expert_feature_distance
from .metrics.masks import binarize, mask_metrics
from .metrics.report import MetricsReport, aggregate_report
from .metrics.text import parse_grid_answer, rouge_l
from .models import UnifiedModel
from .region import evidence_batch
from .synthbench.dataset import SampleRecord
from .synthbench.labels import DEFECT_TYPES

log = logging.getLogger(__name__)

MAX_NEW_TOKENS = 14
EVAL_TASKS = ("location", "analysis", "decision", "defect_type")
_GEN_EVAL_BATCH = 25
_UND_EVAL_BATCH = 50


def _scan_exactly_one(text: str, candidates: tuple[str, ...]) -> str | None:
    words = text.lower().split()
    hits = [c for c in candidates if c in words]
    counts = sum(words.count(c) for c in hits)
    if len(hits) == 1 and counts == 1:
        return hits[0]
    return None


def evaluate_understanding(
    model: UnifiedModel,
    records: list[SampleRecord],
    mode: str,
    max_new: int = MAX_NEW_TOKENS,
) -> tuple[list[dict], dict[str, str]]:
    """Greedy-decode all four tasks under one evidence mode.

    Returns:
        (per-record rows, per-task isolation digests). The digests cover
        everything EXCEPT the region evidence (prompt ids, visual tokens,
        decoding budget), so ablation runs can assert that only the
        evidence differed between modes.
    """
    rows: dict[str, dict] = {
        r.id: {"id": r.id, "decision_gt": bool(r.anomalous)} for r in records
    }
    digests: dict[str, str] = {}
    for task in EVAL_TASKS:
        applicable = [r for r in records if task in r.answers]
        if not applicable:
            continue
        digest = hashlib.sha256()
        for start in range(0, len(applicable), _UND_EVAL_BATCH):
            chunk = applicable[start : start + _UND_EVAL_BATCH]
            images = np.stack([r.image for r in chunk])
            gt_masks = np.stack([r.mask for r in chunk])
            seqs = [
                model.prompts.build(
                    task, has_region=True, has_image=True, n_image=model.backbone.n_visual
                )
                for _ in chunk
            ]
            visual = model.visual_tokens_np(images)
            with torch.no_grad():
                ev = evidence_batch(images, [mode] * len(chunk), model.expert, model.interface, gt_masks)
                payload = model.interface.payload(ev.tokens, ev.geometry, "understand")
            digest.update(np.array(seqs[0].ids, dtype=np.int64).tobytes())
            digest.update(visual.numpy().tobytes())
            digest.update(str(max_new).encode())
            texts = model.backbone.generate_batch(seqs, visual, payload, max_new)
            for rec, text in zip(chunk, texts):
                _score_answer(rows[rec.id], rec, task, text)
        digests[task] = digest.hexdigest()
    ordered = [rows[r.id] for r in records]
    return ordered, digests


def _score_answer(row: dict, rec: SampleRecord, task: str, text: str) -> None:
    if task == "location":
        cell = parse_grid_answer(text)
        gt = rec.grid_cell
        if cell is None:
            row.update(loc_correct=0.0, loc_within1=0.0, loc_manhattan=4.0)
        else:
            dr, dc = abs(cell[0] - gt.row), abs(cell[1] - gt.col)
            row.update(
                loc_correct=float(dr == 0 and dc == 0),
                loc_within1=float(max(dr, dc) <= 1),
                loc_manhattan=float(dr + dc),
            )
    elif task == "decision":
        label = _scan_exactly_one(text, ("normal", "anomalous"))
        if label is None:  # unparsed counts wrong
            row["decision_pred"] = not row["decision_gt"]
        else:
            row["decision_pred"] = label == "anomalous"
    elif task == "defect_type":
        word = _scan_exactly_one(text, DEFECT_TYPES)
        row["defect_type_correct"] = float(word == rec.defect_type)
    else:  # analysis
        row["rouge_l"] = rouge_l(text, rec.answers["analysis"])


def evaluate_segmentation_rows(model: UnifiedModel, records: list[SampleRecord]) -> list[dict]:
    rows = []
    for rec in records:
        probs, _ = model.expert.predict(rec.image)
        m = mask_metrics(binarize(probs), rec.mask)
        rows.append({
            "id": rec.id,
            "dice": m["dice"],
            "iou": m["iou"],
            "precision": m["precision"],
            "recall": m["recall"],
        })
    return rows


def evaluate_generation_rows(
    model: UnifiedModel,
    records: list[SampleRecord],
    *,
    visual: bool = True,
    seed: int = 0,
    steps: int | None = None,
) -> tuple[list[dict], str]:
    """Inpaint every anomalous record and score fidelity.

    Visual conditioning can be dropped (text-only); the mask/source/
    instruction/seed tuples are hashed so conditioning ablations can prove
    both arms consumed identical inputs.

    Returns:
        (rows, tuple digest hex).
    """
    from .generation.pipeline import inpaint_batch

    anomalous = [r for r in records if r.anomalous]
    rows = []
    digest = hashlib.sha256()
    use_region = visual
    for start in range(0, len(anomalous), _GEN_EVAL_BATCH):
        chunk = anomalous[start : start + _GEN_EVAL_BATCH]
        sources = np.stack([r.clean for r in chunk])
        masks = np.stack([r.mask for r in chunk])
        instructions = [f"add a {r.defect_type} defect in the marked region" for r in chunk]
        for src, m, instr in zip(sources, masks, instructions):
            digest.update(src.astype(np.float32).tobytes())
            digest.update(np.packbits(m).tobytes())
            digest.update(instr.encode())
            digest.update(str(seed).encode())
        generated = inpaint_batch(
            model, sources, masks, instructions,
            steps=steps, seed=seed + start, visual=visual, region=use_region,
        )
        for rec, gen_img in zip(chunk, generated):
            psnr = psnr_decomposed(gen_img, rec.image, rec.mask)
            ssim = ssim_masked(gen_img, rec.image, rec.mask)
            _, feats_gen = model.expert.predict(gen_img)
            _, feats_ref = model.expert.predict(rec.image)
            efd = expert_feature_distance(feats_gen, feats_ref, rec.mask)
            rows.append({
                "id": rec.id,
                "psnr_full": psnr["full"],
                "psnr_bg": psnr["bg"],
                "psnr_mask": psnr["mask"],
                "capped_full": psnr["capped_full"],
                "capped_bg": psnr["capped_bg"],
                "capped_mask": psnr["capped_mask"],
                "ssim_mask": ssim["ssim"],
                "efd_mask": efd["efd_mask"],
            })
        log.info("generation eval: %d/%d (visual=%s)", start + len(chunk), len(anomalous), visual)
    return rows, digest.hexdigest()


def evaluate_checkpoint(
    model: UnifiedModel,
    records: list[SampleRecord],
    mode: str,
    *,
    include_understanding: bool | None = None,
    include_generation: bool | None = None,
    gen_seed: int = 0,
) -> MetricsReport:
    """Full report for one checkpoint on one split under one evidence mode.

    Sections default to whatever the checkpoint's trained components
    support: segmentation always (expert), understanding when the backbone
    was trained, generation when the denoiser was trained.
    """
    trained = model.trained_components
    if include_understanding is None:
        include_understanding = "backbone" in trained
    if include_generation is None:
        include_generation = "denoiser" in trained

    merged: dict[str, dict] = {r.id: {"id": r.id} for r in records}
    for row in evaluate_segmentation_rows(model, records):
        merged[row["id"]].update(row)
    flags: dict = {}
    if include_understanding:
        rows, digests = evaluate_understanding(model, records, mode)
        for row in rows:
            merged[row["id"]].update(row)
        flags["understanding_isolation"] = digests
    if include_generation:
        rows, tuple_digest = evaluate_generation_rows(model, records, visual=True, seed=gen_seed)
        for row in rows:
            merged[row["id"]].update(row)
        flags["generation_tuple_digest"] = tuple_digest

    report = aggregate_report([merged[r.id] for r in records], mode)
    report.flags.update(flags)
    return report

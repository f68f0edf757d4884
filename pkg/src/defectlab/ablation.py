"""Controlled ablations on trained checkpoints.

Three harnesses: the four-mode region ablation (same checkpoint, four
evidence modes, no retraining), the generation conditioning ablation
(visual overlay vs text-only on identical tuples), and the training
strategy comparison (four strategies trained from shared seed and data).
Each emits comparison tables as text + CSV in the layout of the
corresponding results tables.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

from .checkpoints import file_sha256
from .config import UnifiedTrainConfig
from .evaluate import evaluate_generation_rows, evaluate_understanding
from .metrics.report import MetricsReport, aggregate_report, render_table
from .models import UnifiedModel
from .synthbench.dataset import DatasetManifest, load_split
from .training.unified import run_unified_training

log = logging.getLogger(__name__)

REGION_MODES = ("oracle", "predicted", "full_image", "none")
STRATEGIES = ("gt_only", "gt_to_predicted", "stage_wise", "joint_preinit")


def run_region_modes(ckpt_path: str | Path, manifest: DatasetManifest) -> list[MetricsReport]:
    """Evaluate understanding under all four evidence modes, no retraining.

    Asserts mode isolation (prompt ids, visual tokens and decode budget are
    bit-identical across modes) and that the checkpoint file is unchanged.
    """
    ckpt_sha_before = file_sha256(Path(ckpt_path).with_suffix(".pt"))
    model, _ = UnifiedModel.load(ckpt_path)
    records = load_split(manifest, "test")
    reports = []
    digests_by_mode = {}
    for mode in REGION_MODES:
        rows, digests = evaluate_understanding(model, records, mode)
        report = aggregate_report(rows, mode)
        report.flags["understanding_isolation"] = digests
        reports.append(report)
        digests_by_mode[mode] = digests
        log.info("region-mode %s: loc_acc=%.4f", mode, report.understanding.get("loc_acc", float("nan")))
    baseline = digests_by_mode[REGION_MODES[0]]
    for mode, digests in digests_by_mode.items():
        if digests != baseline:
            raise AssertionError(f"mode isolation violated: {mode} digests differ from {REGION_MODES[0]}")
    if file_sha256(Path(ckpt_path).with_suffix(".pt")) != ckpt_sha_before:
        raise AssertionError("checkpoint changed during region-mode ablation")
    return reports


def run_gen_conditioning(
    ckpt_path: str | Path, manifest: DatasetManifest, seed: int = 0
) -> list[MetricsReport]:
    """Visual-overlay vs text-only conditioning on identical inputs."""
    model, _ = UnifiedModel.load(ckpt_path)
    records = load_split(manifest, "test")
    reports = []
    tuple_digests = {}
    for tag, visual in (("text_only", False), ("visual", True)):
        rows, digest = evaluate_generation_rows(model, records, visual=visual, seed=seed)
        report = aggregate_report(rows, tag)
        report.flags["generation_tuple_digest"] = digest
        reports.append(report)
        tuple_digests[tag] = digest
        log.info("conditioning %s: mask PSNR %.2f dB", tag, report.generation.get("psnr_mask", float("nan")))
    if tuple_digests["text_only"] != tuple_digests["visual"]:
        raise AssertionError("conditioning arms consumed different (source, mask, instruction, seed) tuples")
    return reports


def run_train_strategies(
    base_cfg: UnifiedTrainConfig,
    manifest: DatasetManifest,
    out_dir: str | Path,
    strategies: tuple[str, ...] = STRATEGIES,
    gen_seed: int = 0,
) -> dict[str, dict]:
    """Train each strategy on shared seed/data, then evaluate.

    Per strategy: oracle and predicted understanding reports, plus mask
    PSNR for the strategies that train the generation branch ("-" rows
    for the understanding-only variants). A failed arm is reported with
    its error instead of aborting the comparison.
    """
    import dataclasses

    out_dir = Path(out_dir)
    results: dict[str, dict] = {}
    records = load_split(manifest, "test")
    for strategy in strategies:
        cfg = dataclasses.replace(base_cfg, strategy=strategy)
        if strategy in ("gt_only", "gt_to_predicted"):
            cfg = dataclasses.replace(cfg, gen_ckpt="")
        entry: dict = {"strategy": strategy}
        try:
            ckpt = run_unified_training(
                manifest, cfg, out_dir / f"unified_{strategy}",
                loss_log_path=out_dir / f"loss_log_{strategy}.csv",
            )
            model, _ = UnifiedModel.load(ckpt)
            for mode in ("oracle", "predicted"):
                rows, _ = evaluate_understanding(model, records, mode)
                entry[mode] = aggregate_report(rows, f"{strategy}/{mode}")
            if "denoiser" in model.trained_components:
                rows, _ = evaluate_generation_rows(model, records, visual=True, seed=gen_seed)
                entry["generation"] = aggregate_report(rows, f"{strategy}/generation")
            entry["ckpt"] = str(ckpt)
        except Exception as exc:  # partial report with failure note
            log.exception("strategy %s failed", strategy)
            entry["error"] = f"{type(exc).__name__}: {exc}"
        results[strategy] = entry
    return results


def render_strategy_table(results: dict[str, dict]) -> str:
    """Text table: oracle / predicted location accuracy and mask PSNR."""
    lines = [
        f"{'strategy':<18}{'LocAcc oracle':>14}{'LocAcc pred':>13}{'PSNRmask':>10}",
        "-" * 55,
    ]
    for strategy, entry in results.items():
        if "error" in entry:
            lines.append(f"{strategy:<18}  FAILED: {entry['error']}")
            continue
        o = entry["oracle"].understanding.get("loc_acc")
        p = entry["predicted"].understanding.get("loc_acc")
        gen = entry.get("generation")
        psnr = gen.generation.get("psnr_mask") if gen else None
        lines.append(
            f"{strategy:<18}{100 * o:>14.2f}{100 * p:>13.2f}"
            + (f"{psnr:>10.2f}" if psnr is not None else f"{'-':>10}")
        )
    return "\n".join(lines) + "\n"


def save_comparison(
    reports: list[MetricsReport], out_dir: str | Path, name: str, title: str
) -> None:
    """Write a comparison as text table, per-report JSON+CSV, and one
    combined CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.txt").write_text(render_table(reports, title), encoding="utf-8")
    for report in reports:
        report.save(out_dir / f"{name}_{report.mode}.json")
    with open(out_dir / f"{name}.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        keys = ["mode"]
        for r in reports:
            for group in ("segmentation", "understanding", "generation"):
                for k in getattr(r, group):
                    if k not in keys:
                        keys.append(k)
        writer.writerow(keys)
        for r in reports:
            merged = {**r.segmentation, **r.understanding, **r.generation, "mode": r.mode}
            writer.writerow([merged.get(k, "") for k in keys])

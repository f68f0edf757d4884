"""The ``defectlab`` command-line entry point.

Subcommands wire the whole pipeline: ``gen-data`` builds the benchmark,
``train`` runs any stage (seg, gen1..gen3, unified), ``eval`` scores a
checkpoint on a split under one evidence mode, ``ablate`` runs the three
controlled ablations, and ``report`` renders tables and figures from a
run directory. Every command writes a resolved-config snapshot and input
content hashes next to its outputs and exits 0 on success, nonzero with a
one-line diagnostic otherwise.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import (
    AblateCondConfig,
    AblateRegionConfig,
    AblateStrategyConfig,
    ConfigError,
    DataConfig,
    ExpertTrainConfig,
    GenStageConfig,
    UnifiedTrainConfig,
    load_config,
    write_run_stamp,
)

log = logging.getLogger(__name__)

TRAIN_STAGES = ("seg", "gen1", "gen2", "gen3", "unified")
EVAL_MODES = {"oracle": "oracle", "predicted": "predicted", "full": "full_image", "none": "none"}


def _cmd_gen_data(args) -> int:
    from .synthbench.dataset import build_dataset

    cfg = load_config(DataConfig, args.config, args.set)
    out = Path(args.out)
    manifest = build_dataset(cfg, out)
    write_run_stamp(out, cfg, [])
    print(f"wrote {manifest}")
    return 0


def _cmd_train(args) -> int:
    from .synthbench.dataset import load_manifest

    out_dir = Path(args.out)
    ckpt_path = out_dir / f"{args.stage}.pt"
    if args.resume and ckpt_path.exists():
        print(f"checkpoint {ckpt_path} already exists, resuming by reuse")
        return 0

    if args.stage == "seg":
        from .expert.train import train_region_expert

        cfg = load_config(ExpertTrainConfig, args.config, args.set)
        manifest = load_manifest(cfg.manifest)
        path = train_region_expert(manifest, cfg, ckpt_path)
        write_run_stamp(out_dir, cfg, [cfg.manifest])
    elif args.stage.startswith("gen"):
        from .generation.pretrain import run_pretraining_stage

        cfg = load_config(GenStageConfig, args.config, args.set)
        cfg = dataclasses.replace(cfg, stage=int(args.stage[3:]))
        manifest = load_manifest(cfg.manifest)
        path = run_pretraining_stage(manifest, cfg, ckpt_path)
        inputs = [cfg.manifest] + [p for p in (cfg.prev_ckpt, cfg.expert_ckpt) if p]
        write_run_stamp(out_dir, cfg, inputs)
    else:
        from .training.unified import run_unified_training

        cfg = load_config(UnifiedTrainConfig, args.config, args.set)
        manifest = load_manifest(cfg.manifest)
        path = run_unified_training(manifest, cfg, ckpt_path, loss_log_path=out_dir / "loss_log.csv")
        inputs = [cfg.manifest] + [p for p in (cfg.expert_ckpt, cfg.gen_ckpt) if p]
        write_run_stamp(out_dir, cfg, inputs)
    print(f"wrote {path}")
    return 0


def _load_eval_model(ckpt: str):
    from .checkpoints import load_checkpoint
    from .models import UnifiedModel

    _, meta = load_checkpoint(ckpt)
    if meta.get("kind") == "region_expert":
        from .config import ArchConfig

        arch = ArchConfig(**{k: tuple(v) if isinstance(v, list) else v
                             for k, v in meta["config"]["arch"].items()})
        model = UnifiedModel(arch, meta["seed"])
        model.load_expert_checkpoint(ckpt)
        return model
    model, _ = UnifiedModel.load(ckpt)
    return model


def _cmd_eval(args) -> int:
    from .evaluate import evaluate_checkpoint
    from .synthbench.dataset import load_manifest, load_split

    manifest = load_manifest(args.data)
    records = load_split(manifest, args.split)
    model = _load_eval_model(args.ckpt)
    mode = EVAL_MODES[args.mode]
    report = evaluate_checkpoint(model, records, mode, gen_seed=args.gen_seed)
    out_dir = Path(args.out)
    report.save(out_dir / "report.json")
    stamp_cfg = DataConfig(seed=manifest.seed, image_size=manifest.image_size)
    write_run_stamp(out_dir, stamp_cfg, [args.data, Path(args.ckpt).with_suffix(".pt")])
    from .metrics.report import render_table

    table = render_table([report], title=f"eval {args.split} mode={mode}")
    (out_dir / "report.txt").write_text(table, encoding="utf-8")
    print(table)
    return 0


def _cmd_ablate(args) -> int:
    from .synthbench.dataset import load_manifest

    if args.kind == "region":
        from .ablation import run_region_modes, save_comparison

        cfg = load_config(AblateRegionConfig, args.config, args.set)
        reports = run_region_modes(cfg.ckpt, load_manifest(cfg.manifest))
        save_comparison(reports, cfg.out_dir, "region_modes", "region evidence ablation")
        write_run_stamp(cfg.out_dir, cfg, [cfg.manifest, Path(cfg.ckpt).with_suffix(".pt")])
    elif args.kind == "cond":
        from .ablation import run_gen_conditioning, save_comparison

        cfg = load_config(AblateCondConfig, args.config, args.set)
        reports = run_gen_conditioning(cfg.ckpt, load_manifest(cfg.manifest), seed=cfg.seed)
        save_comparison(reports, cfg.out_dir, "gen_conditioning", "generation conditioning ablation")
        write_run_stamp(cfg.out_dir, cfg, [cfg.manifest, Path(cfg.ckpt).with_suffix(".pt")])
    else:
        from .ablation import render_strategy_table, run_train_strategies

        cfg = load_config(AblateStrategyConfig, args.config, args.set)
        manifest = load_manifest(cfg.manifest)
        out_dir = Path(cfg.out_dir)
        tables = []
        for seed in cfg.seeds:
            base = dataclasses.replace(cfg.unified, seed=seed)
            results = run_train_strategies(base, manifest, out_dir / f"seed_{seed}")
            table = render_strategy_table(results)
            tables.append(f"seed {seed}\n{table}")
            for entry in results.values():
                for key in ("oracle", "predicted", "generation"):
                    if key in entry:
                        entry[key].save(out_dir / f"seed_{seed}" / f"{entry['strategy']}_{key}.json")
        text = "\n".join(tables)
        (out_dir / "strategy_comparison.txt").write_text(text, encoding="utf-8")
        write_run_stamp(out_dir, cfg, [cfg.manifest])
        print(text)
        return 0
    print(f"ablation written under {cfg.out_dir}")
    return 0


def _cmd_report(args) -> int:
    from .metrics.report import load_report, render_table

    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory not found: {run_dir}")
    reports = []
    for path in sorted(run_dir.rglob("*.json")):
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            continue
        if isinstance(raw, dict) and "schema_version" in raw and "mode" in raw:
            reports.append(load_report(path))
    if not reports:
        raise FileNotFoundError(f"no metric reports found under {run_dir}")
    table = render_table(reports, title=f"reports under {run_dir}")
    (run_dir / "summary.txt").write_text(table, encoding="utf-8")
    print(table)
    if args.plots:
        from .metrics.plots import render_plots

        written = render_plots(reports, run_dir / "plots")
        print(f"wrote {len(written)} figures under {run_dir / 'plots'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="defectlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train one pipeline stage")
    p.add_argument("stage", choices=TRAIN_STAGES)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="manifest.json path")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--mode", default="predicted", choices=sorted(EVAL_MODES))
    p.add_argument("--out", required=True)
    p.add_argument("--gen-seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run a controlled ablation")
    p.add_argument("kind", choices=("region", "cond", "strategy"))
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("report", help="render tables and figures for a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # one-line diagnostic, nonzero exit
        log.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Flat JSON run configuration with dataclass validation.

Every command takes ``--config`` (a flat JSON object) plus optional
``--set key=value`` overrides, and writes a resolved-config snapshot next
to its outputs together with the seed and content hashes of its inputs.

Full-scale reference constants from the source system are kept here for
documentation; the desk defaults are what actually run.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .checkpoints import file_sha256

# Full-scale reference values (documentation only; desk defaults differ).
PAPER_REGION_TOKEN_DIM = 256
PAPER_METAQUERY_COUNT = 256
PAPER_LORA_RANK = 64
PAPER_LORA_ALPHA = 128
PAPER_UNIFIED_LR = 5e-5
PAPER_UNIFIED_EPOCHS = 1
PAPER_EXPERT_EPOCHS = 25


class ConfigError(ValueError):
    """Malformed configuration: unknown, missing, or invalid keys."""


@dataclass
class ArchConfig:
    """Model-family hyperparameters shared by every stage."""

    image_size: int = 64
    # segmentation expert
    expert_patch: int = 8
    expert_dim: int = 64
    expert_depth: int = 8
    expert_heads: int = 4
    expert_taps: tuple[int, ...] = (2, 4, 6, 8)
    fpn_channels: int = 64
    decoder_channels: tuple[int, ...] = (48, 32, 24, 16)
    # region interface
    region_tokens: int = 16  # K
    region_dim: int = 64  # d (full scale: 256)
    region_heads: int = 4
    # language backbone
    d_backbone: int = 128
    backbone_layers: int = 4
    backbone_heads: int = 4
    backbone_patch: int = 16
    max_len: int = 256
    lora_rank: int = 8
    lora_alpha: int = 16
    # generation branch
    metaquery_count: int = 16  # N (full scale: 256)
    cond_dim: int = 64
    connector_layers: int = 2
    connector_heads: int = 4
    unet_channels: tuple[int, ...] = (32, 48, 64)
    diffusion_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sample_steps: int = 50

    def __post_init__(self) -> None:
        if self.lora_rank >= self.d_backbone:
            raise ConfigError(f"adapter rank {self.lora_rank} must be < d_backbone {self.d_backbone}")
        if self.image_size % self.expert_patch != 0:
            raise ConfigError("image_size must be divisible by expert_patch")
        if self.image_size % self.backbone_patch != 0:
            raise ConfigError("image_size must be divisible by backbone_patch")
        if len(self.expert_taps) != 4:
            raise ConfigError("expert_taps must list exactly 4 tap depths")


@dataclass
class DataConfig:
    """Benchmark generation settings."""

    seed: int = 0
    image_size: int = 64
    train_count: int = 1000
    test_count: int = 250
    normal_ratio: float = 0.3

    def __post_init__(self) -> None:
        if not 0.0 <= self.normal_ratio <= 1.0:
            raise ConfigError("normal_ratio must be in [0, 1]")
        if self.image_size < 32:
            raise ConfigError("image_size must be >= 32")


@dataclass
class ExpertTrainConfig:
    seed: int = 0
    manifest: str = ""
    epochs: int = 8
    batch_size: int = 32
    lr: float = 3e-4
    arch: ArchConfig = field(default_factory=ArchConfig)


@dataclass
class GenStageConfig:
    seed: int = 0
    manifest: str = ""
    stage: int = 1
    epochs: int = 4
    batch_size: int = 16
    lr: float = 2e-4
    prev_ckpt: str = ""  # stage k>1 loads stage k-1
    expert_ckpt: str = ""  # stage 3 needs region evidence
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self) -> None:
        if self.stage not in (1, 2, 3):
            raise ConfigError(f"stage must be 1, 2 or 3, got {self.stage}")


@dataclass
class UnifiedTrainConfig:
    """Unified joint training; `strategy` selects the Table-style variants."""

    seed: int = 0
    manifest: str = ""
    strategy: str = "joint_preinit"  # gt_only | gt_to_predicted | stage_wise | joint_preinit
    epochs: int = 10
    batch_size: int = 32
    gen_batch_size: int = 16
    lr: float = 1e-3
    lambda_u: float = 1.0
    lambda_g: float = 1.0
    ema_decay: float = 0.99
    oracle_mix: float = 0.5  # fraction of oracle evidence in mixed training
    expert_ckpt: str = ""
    gen_ckpt: str = ""  # stage-3 checkpoint (joint_preinit / stage_wise)
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self) -> None:
        strategies = ("gt_only", "gt_to_predicted", "stage_wise", "joint_preinit")
        if self.strategy not in strategies:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {strategies}")
        if self.lambda_u <= 0 or self.lambda_g <= 0:
            raise ConfigError("lambda_u and lambda_g must be > 0")
        if not 0.0 <= self.oracle_mix <= 1.0:
            raise ConfigError("oracle_mix must be in [0, 1]")


@dataclass
class AblateRegionConfig:
    manifest: str = ""
    ckpt: str = ""
    out_dir: str = ""


@dataclass
class AblateCondConfig:
    manifest: str = ""
    ckpt: str = ""
    out_dir: str = ""
    seed: int = 0


@dataclass
class AblateStrategyConfig:
    manifest: str = ""
    out_dir: str = ""
    seeds: tuple[int, ...] = (0,)
    unified: UnifiedTrainConfig = field(default_factory=UnifiedTrainConfig)


_TUPLE_FIELDS = {"expert_taps", "decoder_channels", "unet_channels", "seeds"}


def _build(cls, raw: dict[str, Any], path: str = ""):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys {unknown} for {cls.__name__}" + (f" in {path}" if path else ""))
    kwargs: dict[str, Any] = {}
    for name, value in raw.items():
        if name == "arch" and isinstance(value, dict):
            kwargs[name] = _build(ArchConfig, value, path)
        elif name == "unified" and isinstance(value, dict):
            kwargs[name] = _build(UnifiedTrainConfig, value, path)
        elif name in _TUPLE_FIELDS and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid config for {cls.__name__}: {exc}") from exc


def load_config(cls, path: str | Path, overrides: list[str] | None = None):
    """Load a flat JSON config file into `cls`, applying key=value overrides.

    Override values are parsed as JSON when possible, else kept as strings;
    dotted keys address the nested `arch` block (e.g. ``arch.lora_rank=16``).
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a JSON object: {path}")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, text = item.partition("=")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        target = raw
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigError(f"override path {key!r} does not address an object")
        target[parts[-1]] = value
    return _build(cls, raw, str(path))


def config_to_dict(cfg) -> dict[str, Any]:
    return dataclasses.asdict(cfg)


def write_run_stamp(out_dir: str | Path, cfg, input_paths: list[str | Path]) -> Path:
    """Write the resolved config, seed, and input content hashes for a run."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = config_to_dict(cfg)
    stamp = {
        "config": resolved,
        "seed": resolved.get("seed"),
        "inputs": {str(p): file_sha256(p) for p in input_paths if Path(p).exists()},
        "stamp_version": 1,
    }
    path = out_dir / "run_stamp.json"
    path.write_text(json.dumps(stamp, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path

"""The unified model bundle: every component of the pipeline in one
container with shared checkpoint persistence.

Components: frozen segmentation expert, region interface, language
backbone (frozen base + adapters + embeddings), metaquery embeddings,
connector, denoiser, and the diffusion schedule. Checkpoints store all
component state dicts so a single file is sufficient for evaluation.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .backbone.model import Backbone, MetaqueryEmbedding
from .backbone.prompts import PromptLibrary
from .backbone.vocab import Vocabulary, build_default_vocab
from .checkpoints import load_checkpoint, save_checkpoint
from .config import ArchConfig, config_to_dict
from .expert.model import RegionExpert
from .generation.connector import Connector
from .generation.denoiser import Denoiser
from .generation.schedule import DiffusionSchedule
from .region import RegionInterface
from .seeding import seed_everything


class UnifiedModel:
    """Container wiring the expert, interface, backbone and generation
    branch together; not itself an nn.Module so phases can pick their own
    trainable parameter sets."""

    def __init__(self, arch: ArchConfig, seed: int):
        self.arch = arch
        self.seed = seed
        seed_everything(seed)
        self.vocab: Vocabulary = build_default_vocab(arch.region_tokens, arch.metaquery_count)
        self.prompts = PromptLibrary(self.vocab)
        # construction order is fixed; together with the seed this makes
        # initialization reproducible
        self.expert = RegionExpert(arch)
        self.interface = RegionInterface(arch)
        self.backbone = Backbone(arch, self.vocab)
        self.mq_embed = MetaqueryEmbedding(arch.metaquery_count, arch.d_backbone)
        self.connector = Connector(arch)
        self.denoiser = Denoiser(arch)
        self.schedule = DiffusionSchedule(arch.diffusion_steps, arch.beta_start, arch.beta_end)
        self.trained_components: set[str] = set()
        for p in self.expert.parameters():
            p.requires_grad_(False)
        self.eval_mode()

    # ------------------------------------------------------------------
    # component bookkeeping
    # ------------------------------------------------------------------

    def components(self) -> dict[str, torch.nn.Module]:
        return {
            "expert": self.expert,
            "interface": self.interface,
            "backbone": self.backbone,
            "mq_embed": self.mq_embed,
            "connector": self.connector,
            "denoiser": self.denoiser,
        }

    def eval_mode(self) -> None:
        for module in self.components().values():
            module.eval()

    def parameters_for(self, phase: str) -> list[torch.nn.Parameter]:
        """Trainable parameters of one training phase.

        generation: connector + denoiser + metaquery embeddings (backbone,
        interface and expert frozen). unified: those plus the region
        interface, the adapters, and the token embeddings; base backbone
        weights, its patch encoder, and the expert stay frozen.
        """
        adapters = [
            p for name, p in self.backbone.named_parameters()
            if "lora_a" in name or "lora_b" in name
        ]
        if phase == "generation":
            mods = [self.connector, self.denoiser, self.mq_embed]
            return [p for m in mods for p in m.parameters()]
        if phase == "understanding_only":
            params = [p for p in self.interface.parameters()]
            params.append(self.backbone.tok_embed.weight)
            return params + adapters
        if phase == "unified":
            params = [p for m in (self.connector, self.denoiser, self.mq_embed, self.interface)
                      for p in m.parameters()]
            params.append(self.backbone.tok_embed.weight)
            return params + adapters
        raise ValueError(f"unknown phase {phase!r}")

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def save(self, path: str | Path, kind: str, extra_meta: dict | None = None) -> Path:
        states = {name: mod.state_dict() for name, mod in self.components().items()}
        meta = {
            "kind": kind,
            "seed": self.seed,
            "arch": config_to_dict(self.arch),
            "trained_components": sorted(self.trained_components),
            "frozen": {
                "expert": True,
                "backbone_base": True,
                "backbone_patch_encoder": True,
            },
        }
        meta.update(extra_meta or {})
        return save_checkpoint(path, states, meta)

    @classmethod
    def load(cls, path: str | Path) -> tuple["UnifiedModel", dict]:
        states, meta = load_checkpoint(path)
        arch = ArchConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["arch"].items()})
        model = cls(arch, meta["seed"])
        for name, mod in model.components().items():
            mod.load_state_dict(states[name])
        model.trained_components = set(meta.get("trained_components", []))
        model.eval_mode()
        return model, meta

    def load_expert_checkpoint(self, ckpt_path: str | Path) -> None:
        states, _ = load_checkpoint(ckpt_path)
        self.expert.load_state_dict(states["expert"])
        self.expert.eval()
        for p in self.expert.parameters():
            p.requires_grad_(False)
        self.trained_components.add("expert")

    # ------------------------------------------------------------------
    # shared tensor helpers
    # ------------------------------------------------------------------

    def images_to_tensor(self, images: np.ndarray) -> torch.Tensor:
        """B x H x W x 3 float arrays -> B x 3 x H x W float32 tensor."""
        arr = np.ascontiguousarray(images, dtype=np.float32)
        return torch.from_numpy(arr).permute(0, 3, 1, 2)

    def visual_tokens_np(self, images: np.ndarray) -> torch.Tensor:
        with torch.no_grad():
            return self.backbone.visual_tokens(self.images_to_tensor(images))

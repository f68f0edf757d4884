"""Prompt templates and token-sequence assembly.

Templates live in ``assets/prompt_templates.json`` (task -> template with
``<image>``, ``<region_k>``, ``<geom>`` and ``<mq_i>`` markers, plus an
``{instruction}`` slot for generation). The builder expands the image
marker into the visual span, optionally strips region / image markers,
and records every marked position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .vocab import Vocabulary

_DEFAULT_TEMPLATES = Path(__file__).resolve().parent.parent / "assets" / "prompt_templates.json"


@dataclass
class TokenSequence:
    """Prompt (+ optional answer) ids with marked structural positions."""

    ids: list[int]
    placeholder_positions: list[int] = field(default_factory=list)
    image_span: tuple[int, int] | None = None  # [start, end)
    metaquery_span: tuple[int, int] | None = None
    prompt_len: int = 0  # answer tokens start here

    def __post_init__(self) -> None:
        if self.placeholder_positions != sorted(self.placeholder_positions):
            raise ValueError("placeholder positions must be strictly increasing")


class PromptLibrary:
    """Fixed per-task templates over a closed vocabulary."""

    def __init__(self, vocab: Vocabulary, templates: dict[str, str] | None = None):
        self.vocab = vocab
        if templates is None:
            templates = json.loads(_DEFAULT_TEMPLATES.read_text(encoding="utf-8"))
        self.templates = dict(templates)

    def build(
        self,
        task: str,
        *,
        has_region: bool = True,
        has_image: bool = True,
        n_image: int = 0,
        instruction: str | None = None,
        answer: str | None = None,
    ) -> TokenSequence:
        """Assemble one token sequence.

        Args:
            task: template name (location / analysis / decision /
                defect_type / generation).
            has_region: keep the K+1 placeholder tokens.
            has_image: keep (and expand) the image span.
            n_image: number of visual-token positions to expand the image
                marker into (required when has_image).
            instruction: fills the generation template's slot.
            answer: optional reference answer; appended followed by <eos>.

        Raises:
            KeyError-style config error for unknown templates.
        """
        if task not in self.templates:
            raise ValueError(f"unknown prompt template {task!r}")
        template = self.templates[task]
        if "{instruction}" in template:
            if instruction is None:
                raise ValueError(f"template {task!r} requires an instruction")
            template = template.replace("{instruction}", instruction)

        ids: list[int] = [self.vocab.bos_id]
        placeholder: list[int] = []
        image_span: tuple[int, int] | None = None
        mq_positions: list[int] = []

        for word in template.split():
            if word == "<image>":
                if not has_image:
                    continue
                if n_image <= 0:
                    raise ValueError("has_image requires n_image > 0")
                image_span = (len(ids), len(ids) + n_image)
                ids.extend([self.vocab.image_id] * n_image)
            elif word.startswith("<region_") or word == "<geom>":
                if not has_region:
                    continue
                placeholder.append(len(ids))
                ids.append(self.vocab.index[word])
            elif word.startswith("<mq_"):
                mq_positions.append(len(ids))
                ids.append(self.vocab.index[word])
            else:
                ids.extend(self.vocab.encode(word))

        prompt_len = len(ids)
        if answer is not None:
            ids.extend(self.vocab.encode(answer))
            ids.append(self.vocab.eos_id)

        mq_span = None
        if mq_positions:
            if mq_positions != list(range(mq_positions[0], mq_positions[-1] + 1)):
                raise ValueError("metaquery tokens must form one contiguous span")
            mq_span = (mq_positions[0], mq_positions[-1] + 1)
        return TokenSequence(
            ids=ids,
            placeholder_positions=placeholder,
            image_span=image_span,
            metaquery_span=mq_span,
            prompt_len=prompt_len,
        )


def default_template_dict(region_tokens: int = 16, metaquery_count: int = 16) -> dict[str, str]:
    """Programmatic default templates (rendered to the shipped asset)."""
    regions = " ".join(f"<region_{k}>" for k in range(region_tokens)) + " <geom>"
    mqs = " ".join(f"<mq_{i}>" for i in range(metaquery_count))
    return {
        "location": f"<image> {regions} where is the defect located",
        "analysis": f"<image> {regions} describe the surface and any defect",
        "decision": f"<image> {regions} decide if the surface is normal or anomalous",
        "defect_type": f"<image> {regions} what type of defect is present",
        "generation": f"<image> {regions} {{instruction}} {mqs}",
    }

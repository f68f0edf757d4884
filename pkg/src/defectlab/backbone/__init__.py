"""Small decoder-only language backbone with a visual-token pathway,
reserved placeholder tokens, embedding injection, rotary positions, and
low-rank adapters."""

from .vocab import SPECIAL_TOKENS, Vocabulary, build_default_vocab
from .prompts import TokenSequence, PromptLibrary
from .lora import LoRALinear, merged_weight
from .model import Backbone, MetaqueryEmbedding, apply_rope, inject_region_tokens

__all__ = [
    "SPECIAL_TOKENS",
    "Vocabulary",
    "build_default_vocab",
    "TokenSequence",
    "PromptLibrary",
    "LoRALinear",
    "merged_weight",
    "Backbone",
    "MetaqueryEmbedding",
    "apply_rope",
    "inject_region_tokens",
]

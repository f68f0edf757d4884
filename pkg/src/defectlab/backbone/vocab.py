"""Closed word-level vocabulary with reserved special tokens.

Reserved ids come first: control tokens, the image slot, the geometry
placeholder, K region placeholders and N metaquery slots; then the closed
word list covering every template and answer. The default rendering ships
as ``assets/vocab.txt`` (one token per line, reserved ids documented in
the header comments).
"""

from __future__ import annotations

from pathlib import Path

PAD, BOS, EOS, IMAGE, GEOM = "<pad>", "<bos>", "<eos>", "<image>", "<geom>"
SPECIAL_TOKENS = (PAD, BOS, EOS, IMAGE, GEOM)

WORDS = (
    # texture categories
    "grid", "stripes", "blobs", "noisefield", "checker", "rings",
    # defect types
    "scratch", "hole", "stain", "crack", "contamination", "missing-patch",
    # grid cells
    "top-left", "top-center", "top-right", "middle-left", "center",
    "middle-right", "bottom-left", "bottom-center", "bottom-right",
    # size buckets and decisions
    "small", "medium", "large", "normal", "anomalous",
    # edit colors
    "red", "green", "blue",
    # template words
    "the", "defect", "is", "located", "at", "region", "where", "what",
    "type", "of", "present", "decide", "if", "surface", "or", "describe",
    "and", "any", "shows", "a", "in", "no", "visible", "with", "add",
    "marked", "recolor", "brighten", "darken", "invert", "flip",
    "horizontally", "vertically", "restore",
)


class Vocabulary:
    """Token <-> id mapping with exact round-trip on whitespace text."""

    def __init__(self, tokens: list[str]):
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(tokens)}
        self.pad_id = self.index[PAD]
        self.bos_id = self.index[BOS]
        self.eos_id = self.index[EOS]
        self.image_id = self.index[IMAGE]
        self.geom_id = self.index[GEOM]
        self.region_ids = [i for i, t in enumerate(tokens) if t.startswith("<region_")]
        self.metaquery_ids = [i for i, t in enumerate(tokens) if t.startswith("<mq_")]

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        """Whitespace-split text to ids; unknown words are an error."""
        ids = []
        for word in text.split():
            if word not in self.index:
                raise ValueError(f"word {word!r} is not in the closed vocabulary")
            ids.append(self.index[word])
        return ids

    def decode(self, ids: list[int]) -> str:
        return " ".join(self.tokens[i] for i in ids)

    def decode_words(self, ids: list[int]) -> str:
        """Decode skipping control/placeholder tokens (for answers)."""
        kept = [
            self.tokens[i]
            for i in ids
            if not (self.tokens[i].startswith("<") and self.tokens[i].endswith(">"))
        ]
        return " ".join(kept)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        n_special = len(SPECIAL_TOKENS) + len(self.region_ids) + len(self.metaquery_ids)
        header = [
            "# defectlab vocabulary: one token per line, line number = token id",
            f"# ids 0..{n_special - 1} are reserved (control, image, geometry,",
            "# region placeholders, metaquery slots); ids beyond that are words",
        ]
        path.write_text("\n".join(header + self.tokens) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln and not ln.startswith("#")])


def build_default_vocab(region_tokens: int = 16, metaquery_count: int = 16) -> Vocabulary:
    """Programmatic default: specials, K region slots, N metaquery slots, words."""
    tokens = list(SPECIAL_TOKENS)
    tokens += [f"<region_{k}>" for k in range(region_tokens)]
    tokens += [f"<mq_{i}>" for i in range(metaquery_count)]
    tokens += list(WORDS)
    return Vocabulary(tokens)

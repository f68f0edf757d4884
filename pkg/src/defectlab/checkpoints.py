"""Checkpoint persistence: one parameter blob plus a JSON sidecar.

The blob (``<name>.pt``) holds named state dicts; the sidecar
(``<name>.json``) holds architecture hyperparameters, the training seed,
the checkpoint kind, and frozen-parameter flags. The format is shared by
every stage of the pipeline.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import torch

CHECKPOINT_FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, states: dict[str, dict], meta: dict[str, Any]) -> Path:
    """Persist named state dicts and their sidecar metadata.

    Args:
        path: target path; ``.pt`` is appended if missing.
        states: mapping component name -> torch state dict.
        meta: JSON-serializable metadata (kind, seed, arch, frozen flags...).

    Returns:
        The path of the written blob.
    """
    path = Path(path)
    if path.suffix != ".pt":
        path = path.with_suffix(path.suffix + ".pt")
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(states, path)
    sidecar = dict(meta)
    sidecar["format_version"] = CHECKPOINT_FORMAT_VERSION
    sidecar["components"] = sorted(states.keys())
    path.with_suffix(".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, dict], dict[str, Any]]:
    """Load (states, meta) written by :func:`save_checkpoint`."""
    path = Path(path)
    if not path.exists() and path.with_suffix(".pt").exists():
        path = path.with_suffix(".pt")
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    states = torch.load(path, map_location="cpu", weights_only=True)
    sidecar_path = path.with_suffix(".json")
    if not sidecar_path.exists():
        raise FileNotFoundError(f"checkpoint sidecar not found: {sidecar_path}")
    meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
    return states, meta


def file_sha256(path: str | Path) -> str:
    """Content hash of a file, used for no-retraining and input-stamp checks."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def state_dicts_equal(a: dict, b: dict) -> bool:
    """Bitwise equality of two state dicts (same keys, identical tensors)."""
    if set(a.keys()) != set(b.keys()):
        return False
    for k in a:
        ta, tb = a[k], b[k]
        if ta.shape != tb.shape or ta.dtype != tb.dtype:
            return False
        if not torch.equal(ta, tb):
            return False
    return True

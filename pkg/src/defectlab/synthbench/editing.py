"""Synthetic editing pairs for the first generation pretraining stage.

Each pair is (source, target, edit mask, instruction): a local recolor /
brightness / inversion edit inside a random connected region, or a global
flip with an all-ones mask. Instructions use the same closed vocabulary
as the understanding answers.
"""

from __future__ import annotations

import numpy as np

from ..seeding import rng_for
from .defects import _star_patch  # same star-convex region builder

EDIT_OPS = (
    "recolor_red",
    "recolor_green",
    "recolor_blue",
    "brighten",
    "darken",
    "invert",
    "flip_horizontal",
    "flip_vertical",
)

_RECOLOR = {
    "recolor_red": (np.array([0.85, 0.1, 0.1]), "recolor the marked region red"),
    "recolor_green": (np.array([0.1, 0.8, 0.15]), "recolor the marked region green"),
    "recolor_blue": (np.array([0.1, 0.15, 0.85]), "recolor the marked region blue"),
}


def _region(rng: np.random.Generator, size: int) -> np.ndarray:
    mask = np.zeros((size, size), dtype=bool)
    cy, cx = rng.uniform(0.2 * size, 0.8 * size, size=2)
    _star_patch(mask, rng, cy, cx, r0=rng.uniform(0.1 * size, 0.2 * size))
    return mask


def make_editing_pair(
    clean_image: np.ndarray, seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, str]:
    """Build one (source, target, mask, instruction) editing example."""
    rng = rng_for(seed, "edit")
    source = np.asarray(clean_image, dtype=np.float64)
    size = source.shape[0]
    op = EDIT_OPS[int(rng.integers(0, len(EDIT_OPS)))]

    if op == "flip_horizontal":
        return source, source[:, ::-1].copy(), np.ones((size, size), dtype=bool), "flip the surface horizontally"
    if op == "flip_vertical":
        return source, source[::-1, :].copy(), np.ones((size, size), dtype=bool), "flip the surface vertically"

    mask = _region(rng, size)
    target = source.copy()
    if op in _RECOLOR:
        color, instruction = _RECOLOR[op]
        target[mask] = 0.2 * source[mask] + 0.8 * color
    elif op == "brighten":
        target[mask] = np.clip(source[mask] + 0.3, 0.0, 1.0)
        instruction = "brighten the marked region"
    elif op == "darken":
        target[mask] = np.clip(source[mask] - 0.3, 0.0, 1.0)
        instruction = "darken the marked region"
    else:  # invert
        target[mask] = 1.0 - source[mask]
        instruction = "invert the marked region"
    return source, np.clip(target, 0.0, 1.0), mask, instruction

"""Procedural surface textures, one generator per category.

All generators return float RGB images in [0, 1], band-limited enough
that a small model can both segment injected defects against them and
plausibly restore masked regions from their surroundings.
"""

from __future__ import annotations

import numpy as np

from ..seeding import rng_for
from .labels import CATEGORIES


def _two_colors(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    base = rng.uniform(0.25, 0.75, size=3)
    delta = rng.uniform(0.15, 0.3)
    direction = rng.choice([-1.0, 1.0])
    other = np.clip(base + direction * delta, 0.05, 0.95)
    return base, other


def _coords(size: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return yy, xx


def _smooth_field(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    # bilinearly upsampled coarse noise: cheap band-limited value noise
    coarse = rng.uniform(0.0, 1.0, size=(cells + 1, cells + 1))
    t = np.linspace(0.0, cells, size)
    i = np.minimum(t.astype(int), cells - 1)
    f = t - i
    top = coarse[i][:, i] * (1 - f)[None, :] + coarse[i][:, i + 1] * f[None, :]
    bot = coarse[i + 1][:, i] * (1 - f)[None, :] + coarse[i + 1][:, i + 1] * f[None, :]
    return top * (1 - f)[:, None] + bot * f[:, None]


def _grid(rng: np.random.Generator, size: int) -> np.ndarray:
    base, line = _two_colors(rng)
    spacing = int(rng.integers(6, 13))
    width = int(rng.integers(1, 3))
    phase = int(rng.integers(0, spacing))
    yy, xx = _coords(size)
    on_line = ((yy.astype(int) + phase) % spacing < width) | (
        (xx.astype(int) + phase) % spacing < width
    )
    img = np.where(on_line[..., None], line[None, None], base[None, None])
    return img


def _stripes(rng: np.random.Generator, size: int) -> np.ndarray:
    c1, c2 = _two_colors(rng)
    angle = rng.uniform(0.0, np.pi)
    period = rng.uniform(6.0, 16.0)
    yy, xx = _coords(size)
    wave = 0.5 * (1.0 + np.sin(2 * np.pi * (xx * np.cos(angle) + yy * np.sin(angle)) / period))
    return c1[None, None] * wave[..., None] + c2[None, None] * (1.0 - wave[..., None])


def _blobs(rng: np.random.Generator, size: int) -> np.ndarray:
    c1, c2 = _two_colors(rng)
    field = _smooth_field(rng, size, cells=int(rng.integers(4, 8)))
    t = np.clip((field - field.min()) / (np.ptp(field) + 1e-9), 0.0, 1.0)
    return c1[None, None] * t[..., None] + c2[None, None] * (1.0 - t[..., None])


def _noisefield(rng: np.random.Generator, size: int) -> np.ndarray:
    base, _ = _two_colors(rng)
    field = _smooth_field(rng, size, cells=int(rng.integers(8, 16)))
    amp = rng.uniform(0.1, 0.2)
    img = base[None, None] + amp * (field[..., None] - 0.5)
    return np.clip(img, 0.0, 1.0)


def _checker(rng: np.random.Generator, size: int) -> np.ndarray:
    c1, c2 = _two_colors(rng)
    cell = int(rng.integers(6, 13))
    off_y = int(rng.integers(0, cell))
    off_x = int(rng.integers(0, cell))
    yy, xx = _coords(size)
    parity = (((yy.astype(int) + off_y) // cell) + ((xx.astype(int) + off_x) // cell)) % 2
    return np.where(parity[..., None] == 0, c1[None, None], c2[None, None])


def _rings(rng: np.random.Generator, size: int) -> np.ndarray:
    c1, c2 = _two_colors(rng)
    cy = rng.uniform(0.2 * size, 0.8 * size)
    cx = rng.uniform(0.2 * size, 0.8 * size)
    period = rng.uniform(5.0, 12.0)
    yy, xx = _coords(size)
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    wave = 0.5 * (1.0 + np.sin(2 * np.pi * dist / period))
    return c1[None, None] * wave[..., None] + c2[None, None] * (1.0 - wave[..., None])


_GENERATORS = {
    "grid": _grid,
    "stripes": _stripes,
    "blobs": _blobs,
    "noisefield": _noisefield,
    "checker": _checker,
    "rings": _rings,
}

assert set(_GENERATORS) == set(CATEGORIES)


def gen_texture(category: str, seed: int, size: int) -> np.ndarray:
    """Deterministic procedural texture for one category.

    Args:
        category: one of :data:`CATEGORIES`.
        seed: texture seed; same (category, seed, size) is bit-identical.
        size: square image side, >= 32.

    Returns:
        float64 H x W x 3 image in [0, 1].
    """
    if category not in _GENERATORS:
        raise ValueError(f"unknown texture category {category!r}")
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    rng = rng_for(seed, "texture", category)
    img = _GENERATORS[category](rng, size)
    return np.clip(img, 0.0, 1.0)

"""Defect injection and overlay rendering.

Each injected defect is a single connected blob whose area ratio lies in
[0.005, 0.15]. Appearance is alpha-composited over the clean image; the
alpha support never extends beyond a 2-pixel dilation of the mask, so
pixels outside ``dilate(mask, 2)`` equal the clean image exactly.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..seeding import rng_for
from .labels import DEFECT_TYPES

AREA_RATIO_RANGE = (0.005, 0.15)
BLEND_RADIUS = 2
_MIN_CONTRAST = 0.35  # luma push of the defect body away from local texture


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev dilation: `radius` iterations with a full 3x3 structure."""
    if radius <= 0:
        return np.asarray(mask).astype(bool)
    return ndimage.binary_dilation(
        np.asarray(mask).astype(bool), structure=np.ones((3, 3), dtype=bool), iterations=radius
    )


def _disk_stamp(mask: np.ndarray, cy: float, cx: float, radius: float) -> None:
    h, w = mask.shape
    y0, y1 = max(0, int(cy - radius - 1)), min(h, int(cy + radius + 2))
    x0, x1 = max(0, int(cx - radius - 1)), min(w, int(cx + radius + 2))
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    mask[y0:y1, x0:x1] |= (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2


def _stroke(mask: np.ndarray, points: np.ndarray, radius: float) -> None:
    # connected by construction: consecutive stamps overlap
    for (y0, x0), (y1, x1) in zip(points[:-1], points[1:]):
        steps = max(2, int(np.hypot(y1 - y0, x1 - x0) / max(radius * 0.5, 0.5)) + 1)
        for t in np.linspace(0.0, 1.0, steps):
            _disk_stamp(mask, y0 + t * (y1 - y0), x0 + t * (x1 - x0), radius)


def _star_patch(mask: np.ndarray, rng: np.random.Generator, cy: float, cx: float, r0: float) -> None:
    # star-convex region: radius modulated smoothly around the boundary
    h, w = mask.shape
    n = 16
    wobble = rng.uniform(-0.35, 0.35, size=n)
    angles = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    yy, xx = np.mgrid[0:h, 0:w]
    theta = np.arctan2(yy - cy, xx - cx)
    radius_at = np.interp(theta, np.sort(angles) - np.pi, wobble[np.argsort(angles)], period=2 * np.pi)
    limit = r0 * (1.0 + radius_at)
    mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= limit**2


def _mask_scratch(rng, size):
    mask = np.zeros((size, size), dtype=bool)
    cy, cx = rng.uniform(0.15 * size, 0.85 * size, size=2)
    angle = rng.uniform(0.0, np.pi)
    length = rng.uniform(0.18 * size, 0.42 * size)
    dy, dx = 0.5 * length * np.sin(angle), 0.5 * length * np.cos(angle)
    pts = np.array([[cy - dy, cx - dx], [cy + dy, cx + dx]])
    _stroke(mask, pts, radius=rng.uniform(1.5, 2.5))
    return mask


def _mask_hole(rng, size):
    mask = np.zeros((size, size), dtype=bool)
    cy, cx = rng.uniform(0.15 * size, 0.85 * size, size=2)
    _disk_stamp(mask, cy, cx, radius=rng.uniform(0.05 * size, 0.11 * size))
    return mask


def _mask_stain(rng, size):
    mask = np.zeros((size, size), dtype=bool)
    cy, cx = rng.uniform(0.18 * size, 0.82 * size, size=2)
    _star_patch(mask, rng, cy, cx, r0=rng.uniform(0.06 * size, 0.13 * size))
    return mask


def _mask_crack(rng, size):
    mask = np.zeros((size, size), dtype=bool)
    n_seg = int(rng.integers(3, 6))
    pts = [rng.uniform(0.15 * size, 0.85 * size, size=2)]
    heading = rng.uniform(0.0, 2 * np.pi)
    for _ in range(n_seg):
        heading += rng.uniform(-0.9, 0.9)
        step = rng.uniform(0.08 * size, 0.16 * size)
        nxt = pts[-1] + step * np.array([np.sin(heading), np.cos(heading)])
        pts.append(np.clip(nxt, 2, size - 3))
    _stroke(mask, np.array(pts), radius=rng.uniform(1.3, 2.0))
    return mask


def _mask_contamination(rng, size):
    mask = np.zeros((size, size), dtype=bool)
    cy, cx = rng.uniform(0.18 * size, 0.82 * size, size=2)
    _star_patch(mask, rng, cy, cx, r0=rng.uniform(0.07 * size, 0.12 * size))
    return mask


def _mask_missing_patch(rng, size):
    mask = np.zeros((size, size), dtype=bool)
    h = rng.uniform(0.08 * size, 0.22 * size)
    w = rng.uniform(0.08 * size, 0.22 * size)
    cy, cx = rng.uniform(0.18 * size, 0.82 * size, size=2)
    y0, y1 = int(max(0, cy - h / 2)), int(min(size, cy + h / 2))
    x0, x1 = int(max(0, cx - w / 2)), int(min(size, cx + w / 2))
    mask[y0 : max(y1, y0 + 3), x0 : max(x1, x0 + 3)] = True
    return mask


_MASK_BUILDERS = {
    "scratch": _mask_scratch,
    "hole": _mask_hole,
    "stain": _mask_stain,
    "crack": _mask_crack,
    "contamination": _mask_contamination,
    "missing-patch": _mask_missing_patch,
}


def _defect_color(rng: np.random.Generator, local_mean: np.ndarray, defect_type: str) -> np.ndarray:
    luma = float(local_mean @ np.array([0.299, 0.587, 0.114]))
    darken = luma > 0.5 or defect_type in ("hole", "crack", "scratch")
    shift = -1.0 if darken else 1.0
    base = np.clip(local_mean + shift * (_MIN_CONTRAST + rng.uniform(0.0, 0.25)), 0.0, 1.0)
    if defect_type == "stain":
        tint = rng.uniform(-0.15, 0.15, size=3)
        base = np.clip(base + tint, 0.0, 1.0)
    if defect_type == "missing-patch":
        base = np.full(3, 0.5) + rng.uniform(-0.08, 0.08, size=3)
        if abs(luma - 0.5) < _MIN_CONTRAST:
            base = np.clip(local_mean + shift * _MIN_CONTRAST, 0.0, 1.0)
    return base


def inject_defect(
    clean_image: np.ndarray, defect_type: str, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Composite one defect of the given type into a clean image.

    Args:
        clean_image: H x W x 3 float image in [0, 1].
        defect_type: one of :data:`DEFECT_TYPES`.
        seed: defect seed; drawing is retried (deterministically) until the
            area ratio lands in [0.005, 0.15].

    Returns:
        (image, gt_mask): defective image and its boolean mask.
    """
    if defect_type not in _MASK_BUILDERS:
        raise ValueError(f"unknown defect type {defect_type!r}")
    clean = np.asarray(clean_image, dtype=np.float64)
    size = clean.shape[0]
    rng = rng_for(seed, "defect", defect_type)

    lo, hi = AREA_RATIO_RANGE
    mask = None
    for _ in range(20):
        candidate = _MASK_BUILDERS[defect_type](rng, size)
        ratio = candidate.mean()
        if lo <= ratio <= hi:
            mask = candidate
            break
    if mask is None:  # guaranteed-valid fallback
        mask = np.zeros((size, size), dtype=bool)
        _disk_stamp(mask, size / 2, size / 2, radius=0.08 * size)

    # soft alpha whose support stays within the 2 px dilation of the mask
    alpha = ndimage.uniform_filter(mask.astype(np.float64), size=2 * BLEND_RADIUS + 1)
    alpha = np.clip(alpha * 1.6, 0.0, 1.0)
    alpha[~dilate(mask, BLEND_RADIUS)] = 0.0  # moving-sum roundoff must not leak
    alpha[mask] = np.maximum(alpha[mask], 0.85)

    local_mean = clean[mask].mean(axis=0)
    color = _defect_color(rng, local_mean, defect_type)
    layer = np.broadcast_to(color, clean.shape).copy()
    if defect_type == "contamination":
        speck = rng.uniform(0.0, 1.0, size=mask.shape) < 0.35
        speck_shift = -0.4 if color.mean() > 0.5 else 0.4
        layer[speck] = np.clip(color + speck_shift, 0.0, 1.0)
    if defect_type == "hole":
        # soft radial falloff toward near-black center
        dist = ndimage.distance_transform_edt(mask)
        depth = np.clip(dist / max(dist.max(), 1.0), 0.0, 1.0)
        layer = layer * (1.0 - 0.8 * depth[..., None])

    image = clean + alpha[..., None] * (layer - clean)
    return np.clip(image, 0.0, 1.0), mask


def render_overlay(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Alpha-blend pure red at 0.5 over the masked pixels.

    Raises:
        ValueError: if the mask spatial size differs from the image.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {image.shape[:2]}")
    out = image.copy()
    red = np.array([1.0, 0.0, 0.0])
    out[mask] = 0.5 * image[mask] + 0.5 * red
    return out

"""Image-fidelity metrics: decomposed PSNR, masked SSIM, and the
expert-feature distance proxy.

PSNR is decomposed over the full image, background (mask=0) and masked
(mask=1) pixel sets to separate defect fidelity from background
preservation. ``expert_feature_distance`` is a stand-in perceptual score
(cosine distance of frozen segmentation-expert features inside the mask);
it is a proxy and is reported under the ``efd_mask`` key, nothing else.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
# Rec. 601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])


def _check_pair(generated: np.ndarray, reference: np.ndarray, mask: np.ndarray):
    generated = np.asarray(generated, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if generated.shape != reference.shape:
        raise ValueError(f"image shapes differ: {generated.shape} vs {reference.shape}")
    if mask.shape != generated.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {generated.shape[:2]}")
    return generated, reference, mask


def _psnr_from_mse(mse: float) -> tuple[float, bool]:
    if mse <= 0.0:
        return PSNR_CAP_DB, True
    return min(float(10.0 * np.log10(1.0 / mse)), PSNR_CAP_DB), False


def psnr_decomposed(
    generated: np.ndarray, reference: np.ndarray, mask: np.ndarray
) -> dict[str, float | None | bool]:
    """PSNR over full / background / masked pixel sets, images in [0, 1].

    MSE is taken over all channels of the pixel set. Zero MSE is reported
    as the 99.0 dB cap with ``capped_*`` set; an empty pixel set yields
    None with ``absent_*`` set.
    """
    generated, reference, mask = _check_pair(generated, reference, mask)
    err = (generated - reference) ** 2
    per_pixel = err.reshape(err.shape[0], err.shape[1], -1).mean(axis=2)

    out: dict[str, float | None | bool] = {}
    for name, sel in (("full", None), ("bg", ~mask), ("mask", mask)):
        values = per_pixel if sel is None else per_pixel[sel]
        if values.size == 0:
            out[name] = None
            out[f"absent_{name}"] = True
            out[f"capped_{name}"] = False
            continue
        psnr, capped = _psnr_from_mse(float(values.mean()))
        out[name] = psnr
        out[f"absent_{name}"] = False
        out[f"capped_{name}"] = capped
    return out


def _gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _to_luma(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image
    return image @ _LUMA


def ssim_masked(
    generated: np.ndarray, reference: np.ndarray, mask: np.ndarray
) -> dict[str, float | None | bool]:
    """Mean SSIM over 7x7 Gaussian windows whose center pixel is masked.

    Computed on luma. Only windows fully inside the image count; when no
    valid window center is masked the value is None with ``absent`` set.
    """
    generated, reference, mask = _check_pair(generated, reference, mask)
    x = _to_luma(generated)
    y = _to_luma(reference)
    h, w = x.shape
    r = SSIM_WINDOW // 2
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        return {"ssim": None, "absent": True}

    kernel = _gaussian_kernel()
    mu_x = correlate(x, kernel, mode="constant")
    mu_y = correlate(y, kernel, mode="constant")
    xx = correlate(x * x, kernel, mode="constant")
    yy = correlate(y * y, kernel, mode="constant")
    xy = correlate(x * y, kernel, mode="constant")
    var_x = xx - mu_x**2
    var_y = yy - mu_y**2
    cov = xy - mu_x * mu_y

    ssim_map = ((2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    )

    valid = np.zeros_like(mask)
    valid[r : h - r, r : w - r] = mask[r : h - r, r : w - r]
    if not valid.any():
        return {"ssim": None, "absent": True}
    return {"ssim": float(ssim_map[valid].mean()), "absent": False}


def expert_feature_distance(
    features_generated: np.ndarray, features_reference: np.ndarray, mask: np.ndarray
) -> dict[str, float | None | bool]:
    """Mean cosine distance between dense feature maps inside the mask.

    Args:
        features_generated / features_reference: C x h x w feature maps from
            the frozen segmentation expert.
        mask: full-resolution binary mask; area-pooled down to h x w, cells
            with any positive coverage count as inside.

    Returns:
        {"efd_mask": value-or-None, "absent": flag}; lower is closer.
    """
    fg = np.asarray(features_generated, dtype=np.float64)
    fr = np.asarray(features_reference, dtype=np.float64)
    if fg.shape != fr.shape:
        raise ValueError("feature shapes differ")
    mask = np.asarray(mask).astype(bool)
    c, h, w = fg.shape
    hh, ww = mask.shape
    if hh % h != 0 or ww % w != 0:
        raise ValueError("mask resolution is not a multiple of the feature resolution")
    fy, fx = hh // h, ww // w
    pooled = mask.reshape(h, fy, w, fx).mean(axis=(1, 3))
    inside = pooled > 0
    if not inside.any():
        return {"efd_mask": None, "absent": True}
    a = fg.reshape(c, -1)[:, inside.ravel()]
    b = fr.reshape(c, -1)[:, inside.ravel()]
    eps = 1e-12
    cos = (a * b).sum(axis=0) / (np.linalg.norm(a, axis=0) * np.linalg.norm(b, axis=0) + eps)
    return {"efd_mask": float(np.mean(1.0 - cos)), "absent": False}

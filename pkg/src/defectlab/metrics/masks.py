"""Pixel-overlap metrics for binary segmentation masks."""

from __future__ import annotations

import numpy as np

BINARIZE_THRESHOLD = 0.5


def binarize(prob_mask: np.ndarray, threshold: float = BINARIZE_THRESHOLD) -> np.ndarray:
    """Binarize a probability map; values >= threshold count as positive."""
    return np.asarray(prob_mask) >= threshold


def mask_metrics(pred: np.ndarray, gt: np.ndarray) -> dict[str, float | bool]:
    """Dice, IoU, precision and recall between two binary masks.

    Conventions: both masks empty -> all four metrics are 1.0. A metric whose
    denominator is zero while the other mask is nonempty is reported as 0.0
    and flagged (``undefined_recall`` / ``undefined_precision``).

    Args:
        pred: predicted mask (already binarized upstream).
        gt: ground-truth mask.

    Returns:
        Dict with dice, iou, precision, recall and undefined-* flags.
    """
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")

    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))

    out: dict[str, float | bool] = {"undefined_recall": False, "undefined_precision": False}
    if tp == 0 and fp == 0 and fn == 0:
        out.update(dice=1.0, iou=1.0, precision=1.0, recall=1.0)
        return out

    out["dice"] = 2.0 * tp / (2.0 * tp + fp + fn)
    out["iou"] = tp / (tp + fp + fn)
    if tp + fp == 0:
        out["precision"] = 0.0
        out["undefined_precision"] = True
    else:
        out["precision"] = tp / (tp + fp)
    if tp + fn == 0:
        out["recall"] = 0.0
        out["undefined_recall"] = True
    else:
        out["recall"] = tp / (tp + fn)
    return out

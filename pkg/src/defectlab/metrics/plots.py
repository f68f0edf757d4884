"""Matplotlib figure rendering for reports: one bar chart per metric,
written as PNG files next to the delimited output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .report import MetricsReport

_PLOT_METRICS = [
    ("segmentation", "dice", "Dice"),
    ("segmentation", "iou", "IoU"),
    ("understanding", "loc_acc", "Location accuracy"),
    ("understanding", "within1", "Within-1 rate"),
    ("understanding", "manhattan", "Mean Manhattan distance"),
    ("understanding", "decision_balanced_acc", "Decision balanced accuracy"),
    ("understanding", "defect_type_acc", "Defect-type accuracy"),
    ("understanding", "rouge_l", "ROUGE-L"),
    ("generation", "psnr_full", "PSNR full (dB)"),
    ("generation", "psnr_bg", "PSNR background (dB)"),
    ("generation", "psnr_mask", "PSNR mask (dB)"),
    ("generation", "ssim_mask", "SSIM mask"),
]


def render_plots(reports: list[MetricsReport], out_dir: str | Path) -> list[Path]:
    """Render one bar chart per available metric across the given reports.

    Returns the list of written PNG paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for group, key, label in _PLOT_METRICS:
        values = []
        names = []
        for r in reports:
            v = getattr(r, group).get(key)
            if v is not None:
                values.append(v)
                names.append(r.mode)
        if not values:
            continue
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.bar(range(len(values)), values, color="#4878d0")
        ax.set_xticks(range(len(values)))
        ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
        ax.set_ylabel(label)
        ax.set_title(label)
        fig.tight_layout()
        path = out_dir / f"{group}_{key}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written

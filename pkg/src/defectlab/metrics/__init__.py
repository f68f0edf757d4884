"""Evaluation metrics and report aggregation for all three tasks."""

from .masks import binarize, mask_metrics
from .text import (
    GRID_PHRASES,
    balanced_accuracy,
    location_metrics,
    parse_grid_answer,
    rouge_l,
)
from .images import expert_feature_distance, psnr_decomposed, ssim_masked
from .report import (
    METRICS_SCHEMA_VERSION,
    MetricsReport,
    aggregate_report,
    load_report,
    render_table,
)

__all__ = [
    "binarize",
    "mask_metrics",
    "GRID_PHRASES",
    "parse_grid_answer",
    "location_metrics",
    "balanced_accuracy",
    "rouge_l",
    "psnr_decomposed",
    "ssim_masked",
    "expert_feature_distance",
    "METRICS_SCHEMA_VERSION",
    "MetricsReport",
    "aggregate_report",
    "load_report",
    "render_table",
]

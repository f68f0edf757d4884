"""Dense segmentation expert: patch encoder with multi-depth taps, FPN-style
fusion, spatial attention, and a four-stage upsampling decoder."""

from .model import FpnFusion, PatchEncoder, RegionExpert, SpatialAttention, seg_loss
from .train import eval_segmentation, train_region_expert

__all__ = [
    "PatchEncoder",
    "FpnFusion",
    "SpatialAttention",
    "RegionExpert",
    "seg_loss",
    "train_region_expert",
    "eval_segmentation",
]

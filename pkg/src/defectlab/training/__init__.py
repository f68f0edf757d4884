"""Training orchestration: EMA-normalized joint objective and the four
unified training strategies."""

from .ema import EmaState, ema_update, joint_loss
from .unified import run_unified_training, understanding_loss

__all__ = ["EmaState", "ema_update", "joint_loss", "run_unified_training", "understanding_loss"]

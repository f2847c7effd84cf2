from .losses import intensity_loss, monotonicity_regularizer, ssim, ssim_loss, tv_regularizer
from .loop import (
    Checkpoint,
    LossWeights,
    TrainConfig,
    held_out_l1,
    history_csv,
    load_checkpoint,
    save_checkpoint,
    total_loss,
    train_loop,
)
from .optim import AdamW

__all__ = [
    "AdamW",
    "Checkpoint",
    "LossWeights",
    "TrainConfig",
    "held_out_l1",
    "history_csv",
    "intensity_loss",
    "load_checkpoint",
    "monotonicity_regularizer",
    "save_checkpoint",
    "ssim",
    "ssim_loss",
    "total_loss",
    "train_loop",
    "tv_regularizer",
]

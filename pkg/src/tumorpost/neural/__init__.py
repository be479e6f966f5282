from .attention import (
    AttentionGateParams,
    attention_gate,
    pixel_shuffle,
    pixel_unshuffle,
)
from .band import extract_patches, make_band_dataset, refine_labels
from .losses import LossParams, bce_loss, dice_loss, seg_loss
from .model import Cnn3dConfig, Cnn3dModel
from .training import (
    Adam,
    EpochRecord,
    SgdMomentum,
    TrainSchedule,
    evaluate,
    save_history_csv,
    train_patch_cnn,
)

__all__ = [
    "AttentionGateParams", "attention_gate", "pixel_shuffle", "pixel_unshuffle",
    "extract_patches", "make_band_dataset", "refine_labels",
    "LossParams", "bce_loss", "dice_loss", "seg_loss",
    "Cnn3dConfig", "Cnn3dModel",
    "Adam", "EpochRecord", "SgdMomentum", "TrainSchedule",
    "evaluate", "save_history_csv", "train_patch_cnn",
]

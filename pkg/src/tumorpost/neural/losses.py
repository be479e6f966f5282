"""Segmentation losses with analytic gradients with respect to predictions."""

from dataclasses import dataclass

import numpy as np

_CLAMP = 1e-12


@dataclass
class LossParams:
    lambda_dice: float = 0.7
    lambda_bce: float = 0.3
    w_liver: float = 1.0
    w_tumor: float = 2.0
    eps: float = 1e-5

    def __post_init__(self):
        if self.lambda_dice < 0 or self.lambda_bce < 0 or self.eps <= 0:
            raise ValueError("loss weights must be >= 0 and eps > 0")


def bce_loss(p, t):
    """Mean binary cross-entropy; returns (loss, dL/dp).

    Log arguments are clamped to [1e-12, 1-1e-12] so perfect predictions
    stay finite.
    """
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError("prediction/target shape mismatch")
    pc = np.clip(p, _CLAMP, 1.0 - _CLAMP)
    n = p.size
    loss = float(-(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)).sum() / n)
    dp = (-(t / pc) + (1.0 - t) / (1.0 - pc)) / n
    return loss, dp


def dice_loss(p, t, eps=1e-5):
    """Soft Dice loss 1 - (2<p,t>+eps)/(|p|^2+|t|^2+eps); returns (loss, dL/dp)."""
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError("prediction/target shape mismatch")
    inter = float((p * t).sum())
    denom = float((p ** 2).sum() + (t ** 2).sum() + eps)
    num = 2.0 * inter + eps
    loss = 1.0 - num / denom
    dp = -(2.0 * t * denom - num * 2.0 * p) / denom ** 2
    return loss, dp


def seg_loss(p_liver, p_tumor, t_liver, t_tumor, params: LossParams = None):
    """Weighted Dice+BCE over the liver and tumor channels.

    Returns (total_loss, dL/dp_liver, dL/dp_tumor).
    """
    params = params or LossParams()
    total = 0.0
    grads = []
    for p, t, w in (
        (p_liver, t_liver, params.w_liver),
        (p_tumor, t_tumor, params.w_tumor),
    ):
        ld, gd = dice_loss(p, t, eps=params.eps)
        lb, gb = bce_loss(p, t)
        total += w * (params.lambda_dice * ld + params.lambda_bce * lb)
        grads.append(w * (params.lambda_dice * gd + params.lambda_bce * gb))
    return float(total), grads[0], grads[1]

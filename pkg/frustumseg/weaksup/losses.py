"""Losses of the three heads. Each returns ``(value, gradient w.r.t. its prediction)``."""
from typing import Tuple

import numpy as np
from pydantic import BaseModel, root_validator

from ..network.layers import maxpool3d_forward

CLAMP = 1e-7


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=np.float64), CLAMP, 1.0 - CLAMP)


def loss_cls(logits: np.ndarray, label: int) -> Tuple[float, np.ndarray]:
    """Two-class softmax cross-entropy."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    prob = np.exp(z) / np.exp(z).sum()
    value = -np.log(max(prob[label], CLAMP))
    grad = prob.copy()
    grad[label] -= 1.0
    return float(value), grad


def loss_loc(pred: np.ndarray, target: np.ndarray, pos_weight: float = 10.0) -> Tuple[float, np.ndarray]:
    """Binary cross-entropy with positives weighted by ``pos_weight``, mean over voxels."""
    p = _clamp(pred)
    t = np.asarray(target, dtype=np.float64)
    n = p.size
    value = -(pos_weight * t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).sum() / n
    grad = (-pos_weight * t / p + (1.0 - t) / (1.0 - p)) / n
    return float(value), grad


def bce(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    return loss_loc(pred, target, pos_weight=1.0)


def soft_dice_loss(pred: np.ndarray, target: np.ndarray, smooth: float = 1.0) -> Tuple[float, np.ndarray]:
    p = _clamp(pred)
    t = np.asarray(target, dtype=np.float64)
    inter = (p * t).sum()
    denom = p.sum() + t.sum() + smooth
    value = 1.0 - (2.0 * inter + smooth) / denom
    grad = -(2.0 * t * denom - (2.0 * inter + smooth)) / denom**2
    return float(value), grad


def loss_seg(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """(1 - soft Dice) + BCE over the ROI voxels."""
    dice, d_dice = soft_dice_loss(pred, target)
    ce, d_ce = bce(pred, target)
    return dice + ce, d_dice + d_ce


def loc_target(mask: np.ndarray, stride: int = 4) -> np.ndarray:
    """Stride-``stride`` max-pooling of a binary mask."""
    pooled, _ = maxpool3d_forward(np.asarray(mask, dtype=np.float32)[None], size=stride)
    return pooled[0]


class LossBundle(BaseModel):
    l_cls: float = 0.0
    l_loc: float = 0.0
    l_seg: float = 0.0
    l_joint: float = 0.0

    @root_validator(skip_on_failure=True)
    def _additive(cls, values):
        parts = (values["l_cls"], values["l_loc"], values["l_seg"])
        if any(v < 0 for v in parts):
            raise ValueError(f"Losses must be non-negative, got {parts}")
        if values["l_joint"] != values["l_cls"] + values["l_loc"] + values["l_seg"]:
            raise ValueError("l_joint must equal l_cls + l_loc + l_seg")
        return values

    @classmethod
    def of(cls, l_cls: float = 0.0, l_loc: float = 0.0, l_seg: float = 0.0) -> "LossBundle":
        return cls(l_cls=l_cls, l_loc=l_loc, l_seg=l_seg, l_joint=l_cls + l_loc + l_seg)

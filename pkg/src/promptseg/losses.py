"""Segmentation and distillation losses on autodiff tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor

DICE_EPS = 1e-6


@dataclass
class LossBreakdown:
    dice: float
    bce: float
    iou_mse: float
    total: float

    def as_dict(self):
        return {"dice": self.dice, "bce": self.bce, "iou_mse": self.iou_mse, "total": self.total}


def _batched(logits: Tensor, gt) -> tuple:
    gt = np.asarray(gt)
    if logits.ndim == 3 and gt.ndim == 2:  # unbatched 1xSxS
        logits, gt = T.reshape(logits, (1,) + logits.shape), gt[None]
    if logits.ndim == 4:
        if logits.shape[1] != 1:
            raise DimensionError(f"expected one mask channel, got logits {logits.shape}")
        logits = T.reshape(logits, (logits.shape[0],) + logits.shape[2:])
    if logits.shape != gt.shape:
        raise DimensionError(f"logits {logits.shape} and gt {gt.shape} differ")
    if not np.isin(gt, (0, 1)).all():
        raise ContractError("gt must be binary")
    return logits, gt.astype(logits.dtype)


def mask_loss(logits: Tensor, gt):
    """Soft Dice (mean over samples) and mean BCE-with-logits. Returns two scalar tensors."""
    logits, g = _batched(logits, gt)
    b = logits.shape[0]
    p = T.reshape(T.sigmoid(logits), (b, -1))
    gflat = Tensor(g.reshape(b, -1))
    inter = T.tsum(p * gflat, axis=1)
    denom = T.tsum(p, axis=1) + Tensor(gflat.data.sum(axis=1))
    dice = T.mean(1.0 - (2.0 * inter + DICE_EPS) / (denom + DICE_EPS))
    # softplus(x) - x*g == -[g log s(x) + (1-g) log(1-s(x))]
    bce = T.mean(T.softplus(logits) - logits * Tensor(g))
    return dice, bce


def actual_iou(mask_pred, gt) -> np.ndarray:
    """Per-sample IoU of binary masks (..., H, W); empty vs empty counts as 1."""
    a = np.asarray(mask_pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    axes = (-2, -1)
    inter = (a & g).sum(axis=axes)
    union = (a | g).sum(axis=axes)
    return np.where(union == 0, 1.0, inter / np.maximum(union, 1))


def iou_loss(iou_pred, mask_pred, gt):
    """Squared error between predicted and measured IoU, averaged over the batch."""
    target = np.atleast_1d(actual_iou(mask_pred, gt))
    if isinstance(iou_pred, Tensor):
        diff = T.reshape(iou_pred, (-1,)) - Tensor(target.astype(iou_pred.dtype))
        return T.mean(diff * diff)
    return float(np.mean((np.atleast_1d(iou_pred) - target) ** 2))


def total_loss(logits: Tensor, gt, iou_pred: Tensor, mask_pred=None):
    """Unit-weighted Dice + BCE + IoU-MSE. Returns (scalar tensor, LossBreakdown).

    The IoU target comes from ``logits > 0`` unless ``mask_pred`` pins it (the
    target is piecewise constant in the logits, so finite-difference checks
    freeze it).
    """
    dice, bce = mask_loss(logits, gt)
    lg, g = _batched(logits, gt)
    iou = iou_loss(iou_pred, lg.data > 0 if mask_pred is None else mask_pred, g)
    total = dice + bce + iou
    return total, LossBreakdown(float(dice.data), float(bce.data), float(iou.data), float(total.data))


def distill_loss(student: Tensor, teacher) -> Tensor:
    """Mean L1 to a teacher embedding, bilinearly resized to the student grid first."""
    t = teacher.data if isinstance(teacher, Tensor) else np.asarray(teacher)
    if t.ndim == student.ndim - 1:
        t = t[None]
    if t.ndim != student.ndim:
        raise DimensionError(f"student {student.shape} vs teacher {t.shape}")
    if t.shape[-3] != student.shape[-3]:
        raise ContractError(f"channel mismatch: student {student.shape[-3]}, teacher {t.shape[-3]}")
    if t.shape[-2:] != student.shape[-2:]:
        t = T.resize_bilinear_np(t, student.shape[-2:])
    return T.mean(T.tabs(student - Tensor(t.astype(student.dtype))))

"""Focal classification loss, IoU regression loss and the double-head objective."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor, record

LOG_CLAMP = float(np.log(1e-12))


@dataclass(frozen=True)
class LossWeights:
    fc: float = 2.0
    fc_cls_share: float = 0.7
    conv: float = 2.5
    conv_box_share: float = 0.8

    def __post_init__(self) -> None:
        for name in ("fc_cls_share", "conv_box_share"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")

    # complements are taken in decimal so that a share written as 0.7
    # pairs with exactly 0.3 (binary 1 - 0.7 is 0.30000000000000004)
    @property
    def fc_box_share(self) -> float:
        return _complement(self.fc_cls_share)

    @property
    def conv_cls_share(self) -> float:
        return _complement(self.conv_box_share)

    def coefficients(self) -> tuple[float, float, float, float]:
        """Multipliers of (fc_cls, fc_box, conv_cls, conv_box) in the total."""
        return (
            self.fc * self.fc_cls_share,
            self.fc * self.fc_box_share,
            self.conv * self.conv_cls_share,
            self.conv * self.conv_box_share,
        )


def _complement(share: float) -> float:
    return float(Decimal(1) - Decimal(repr(float(share))))


def combined_loss(fc_cls, fc_box, conv_cls, conv_box, weights: LossWeights = LossWeights()):
    """fc-head weighted toward classification, conv-head toward regression.

    Accepts Tensors (the result stays on the tape) or plain floats.
    """
    w = weights
    fc = fc_cls * w.fc_cls_share + fc_box * w.fc_box_share
    conv = conv_cls * w.conv_cls_share + conv_box * w.conv_box_share
    return fc * w.fc + conv * w.conv


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def focal_loss(logits: Tensor, labels, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Sigmoid focal loss summed over locations, divided by max(1, #positives)."""
    z = logits.data
    y = np.asarray(labels, dtype=z.dtype)
    if y.shape != z.shape:
        raise DimensionError(f"labels shape {y.shape} != logits shape {z.shape}")
    sign = 2.0 * y - 1.0
    alpha_t = np.where(y > 0, alpha, 1.0 - alpha)
    log_q = -_softplus(-sign * z)
    clamped = log_q < LOG_CLAMP
    log_q = np.maximum(log_q, LOG_CLAMP)
    q = np.exp(log_q)
    damp = (1.0 - q) ** gamma
    norm = max(1.0, float(y.sum()))
    total = float(-(alpha_t * damp * log_q).sum() / norm)

    def back(g):
        inner = gamma * q * damp * log_q - np.where(clamped, 0.0, damp * (1.0 - q))
        return (g * alpha_t * sign * inner / norm,)

    return record("focal_loss", (logits,), np.asarray(total, dtype=z.dtype), back)


def iou_loss(pred: Tensor, target, mask, axis: int = 1) -> Tensor:
    """Mean of 1 - IoU over masked locations.

    ``pred`` and ``target`` hold (l, t, r, b) distances from a shared
    location along ``axis``; ``mask`` has their shape minus that axis.
    With no positives the loss is 0 and a RuntimeWarning is issued.
    """
    p_all = pred.data
    t_all = np.asarray(target, dtype=p_all.dtype)
    if t_all.shape != p_all.shape or p_all.shape[axis] != 4:
        raise DimensionError(f"iou_loss needs matching (..., 4, ...) inputs, got {p_all.shape}, {t_all.shape}")
    p_last = np.moveaxis(p_all, axis, -1)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != p_last.shape[:-1]:
        raise DimensionError(f"mask shape {mask.shape} != {p_last.shape[:-1]}")
    n = int(mask.sum())
    if n == 0:
        warnings.warn("iou_loss: no positive locations", RuntimeWarning, stacklevel=2)
        return Tensor(np.zeros((), dtype=p_all.dtype))

    p = p_last[mask]
    t = np.moveaxis(t_all, axis, -1)[mask]
    pl, pt, pr, pb = p.T
    tl, tt, tr, tb = t.T
    iw_raw = np.minimum(pl, tl) + np.minimum(pr, tr)
    ih_raw = np.minimum(pt, tt) + np.minimum(pb, tb)
    iw, ih = np.maximum(iw_raw, 0.0), np.maximum(ih_raw, 0.0)
    inter = iw * ih
    pw, ph = pl + pr, pt + pb
    area_p = pw * ph
    union = area_p + (tl + tr) * (tt + tb) - inter
    iou = inter / union
    total = float((1.0 - iou).mean())

    def back(g):
        overlap = (iw_raw > 0) & (ih_raw > 0)
        d_inter = (union + inter) / union**2 * overlap
        d_area = -inter / union**2
        gp = np.empty_like(p)
        gp[:, 0] = d_inter * ih * (pl <= tl) + d_area * ph
        gp[:, 2] = d_inter * ih * (pr <= tr) + d_area * ph
        gp[:, 1] = d_inter * iw * (pt <= tt) + d_area * pw
        gp[:, 3] = d_inter * iw * (pb <= tb) + d_area * pw
        full = np.zeros_like(p_last)
        full[mask] = gp * (-g / n)
        return (np.moveaxis(full, -1, axis),)

    return record("iou_loss", (pred,), np.asarray(total, dtype=p_all.dtype), back)

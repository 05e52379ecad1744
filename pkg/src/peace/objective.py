"""Class-balanced BCE and the composite training loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ValidationError

CLIP = (1.0, 5.0)


@dataclass(frozen=True)
class ObjectiveConfig:
    lambda_max: float = 1.0
    clip_min: float = CLIP[0]
    clip_max: float = CLIP[1]

    def __post_init__(self):
        if not np.isfinite(self.lambda_max) or self.lambda_max < 0:
            raise ValidationError("lambda_max must be finite and >= 0")
        if not 0 < self.clip_min <= self.clip_max:
            raise ValidationError("need 0 < clip_min <= clip_max")


def class_weights(pos_counts, clip: tuple[float, float] = CLIP) -> np.ndarray:
    """mean(count) / count_c clipped to ``clip``; an absent class gets the ceiling."""
    counts = np.asarray(pos_counts, dtype=np.float64)
    if np.any(counts < 0):
        raise ValidationError("positive counts must be >= 0")
    if not counts.any():
        raise ValidationError("class weights need at least one positive label")
    with np.errstate(divide="ignore"):
        raw = np.where(counts > 0, counts.mean() / np.where(counts > 0, counts, 1.0), np.inf)
    return np.clip(raw, clip[0], clip[1])


def weighted_bce(logits, targets, weights=None) -> ad.Tensor:
    """Mean over B x C of w_c * [softplus(l) - y l] (the stable BCE-with-logits form)."""
    logits = ad.as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape or logits.ndim != 2:
        raise ValidationError(f"logits {logits.shape} and targets {y.shape} must both be B x C")
    per = ad.softplus(logits) - logits * y
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (logits.shape[1],):
            raise ValidationError("one weight per class expected")
        per = per * w
    return ad.mean(per)


def total_loss(ce_ecg, ce_rep, lsbc, w_lsbc: float, cfg: ObjectiveConfig = ObjectiveConfig()):
    """(ce_ecg + ce_rep) + lambda_max * w * lsbc; the alignment term is
    skipped outright when its coefficient is zero."""
    coef = cfg.lambda_max * float(w_lsbc)
    base = ce_ecg + ce_rep
    if coef == 0.0:
        return base
    return base + lsbc * coef

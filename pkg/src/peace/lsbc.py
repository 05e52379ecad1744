"""Label-specific bidirectional contrastive loss over LQN outputs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ValidationError

DEFAULT_TAU = 0.07
COS_EPS = 1e-8


@dataclass(frozen=True)
class PairSets:
    positives: tuple[np.ndarray, ...]
    negatives: tuple[np.ndarray, ...]

    @property
    def active(self) -> tuple[int, ...]:
        return tuple(c for c, p in enumerate(self.positives) if p.size)


def build_pair_sets(label_matrix) -> PairSets:
    y = np.asarray(label_matrix)
    if y.ndim != 2:
        raise ValidationError("label matrix must be B x C")
    pos = tuple(np.flatnonzero(y[:, c] != 0) for c in range(y.shape[1]))
    neg = tuple(np.flatnonzero(y[:, c] == 0) for c in range(y.shape[1]))
    return PairSets(pos, neg)


def directional_loss(z_m1, z_m2, positives, negatives, tau: float = DEFAULT_TAU) -> ad.Tensor:
    """Supervised InfoNCE from modality 1 anchors to modality 2 candidates.

    z_m1, z_m2: [B, d]. Anchors are rows in ``positives``; the numerator
    sums over positives (self included), the denominator over P u N.
    """
    if tau <= 0:
        raise ValidationError("temperature must be positive")
    pos = np.asarray(positives, dtype=np.intp)
    neg = np.asarray(negatives, dtype=np.intp)
    if pos.size == 0:
        raise ValidationError("directional loss needs at least one positive")
    if neg.size == 0:
        # numerator and denominator coincide: log 1
        return ad.Tensor(0.0)
    a = ad.l2_normalize(ad.as_tensor(z_m1)[pos], eps=COS_EPS)
    b = ad.l2_normalize(ad.as_tensor(z_m2)[np.concatenate([pos, neg])], eps=COS_EPS)
    sim = (a @ ad.transpose(b)) * (1.0 / tau)                     # [|P|, |P|+|N|]
    lse_pos = ad.logsumexp(sim[:, : pos.size], axis=1)
    lse_neg = ad.logsumexp(sim[:, pos.size :], axis=1)
    # -log(num/den) = log(1 + sum_N / sum_P) = softplus(lse_N - lse_P) >= 0
    return ad.mean(ad.softplus(lse_neg - lse_pos))


def lsbc_loss(z_ecg, z_rep, label_matrix, tau: float = DEFAULT_TAU) -> ad.Tensor:
    """Mean over active labels of the two directional losses' average.

    z_ecg, z_rep: [B, C, d]. Returns an exact zero when no label is active.
    """
    z_ecg, z_rep = ad.as_tensor(z_ecg), ad.as_tensor(z_rep)
    if z_ecg.shape != z_rep.shape or z_ecg.ndim != 3:
        raise ValidationError(f"feature tensors must match as [B, C, d]: {z_ecg.shape} vs {z_rep.shape}")
    y = np.asarray(label_matrix)
    if y.shape != z_ecg.shape[:2]:
        raise ValidationError(f"label matrix {y.shape} does not match features {z_ecg.shape[:2]}")
    sets = build_pair_sets(y)
    active = sets.active
    if not active:
        return ad.Tensor(0.0)
    terms = []
    for c in active:
        e, r = z_ecg[:, c, :], z_rep[:, c, :]
        p, n = sets.positives[c], sets.negatives[c]
        terms.append(0.5 * (directional_loss(e, r, p, n, tau) + directional_loss(r, e, p, n, tau)))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(active))

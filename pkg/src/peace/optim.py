"""AdamW with decoupled decay, warmup + cosine learning rate, global-norm clipping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import OptimConfig
from .errors import ValidationError


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict, grads: dict[str, np.ndarray], state: AdamState, cfg: OptimConfig,
               lr: float) -> AdamState:
    """One update of every tensor in ``params`` (name -> Tensor) that has a gradient.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
    New arrays are assigned, so earlier snapshots of ``.data`` stay valid.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        p.data = p.data - lr * (update + cfg.weight_decay * p.data)
    return state


def warmup_steps(cfg: OptimConfig, total_steps: int, steps_per_epoch: int) -> int:
    # short runs keep at least half of their steps for the cosine phase
    return min(cfg.warmup_epochs * steps_per_epoch, (total_steps - 1) // 2)


def lr_schedule(step: int, cfg: OptimConfig, total_steps: int, steps_per_epoch: int,
                lr_init: float | None = None) -> float:
    """Linear warmup from ``warmup_start`` then cosine down to ``min_lr`` at the last step."""
    if total_steps < 1 or steps_per_epoch < 1:
        raise ValidationError("total_steps and steps_per_epoch must be >= 1")
    if not 0 <= step < total_steps:
        raise ValidationError(f"step {step} outside [0, {total_steps})")
    peak = cfg.lr_init if lr_init is None else lr_init
    if peak is None:
        raise ValidationError("no peak learning rate given")
    w = warmup_steps(cfg, total_steps, steps_per_epoch)
    if step < w:
        return cfg.warmup_start + (peak - cfg.warmup_start) * step / w
    span = total_steps - 1 - w
    if span <= 0:
        return cfg.min_lr
    frac = (step - w) / span
    return cfg.min_lr + 0.5 * (peak - cfg.min_lr) * (1.0 + math.cos(math.pi * frac))


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float = 5.0) -> tuple[dict[str, np.ndarray], float]:
    """Rescale all gradients together when their global L2 norm exceeds ``max_norm``.

    Returns the (possibly) rescaled gradients and the pre-clip norm.
    """
    if not max_norm > 0:
        raise ValidationError("max_norm must be positive")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm

"""Curriculum-adaptive weighting of the alignment loss.

The weight is ``beta(t) * [delta_t < eps]`` where ``delta_t`` compares
the current EMA of the classification loss with the EMA ``K`` updates
earlier, and ``beta`` is a three-piece linear ramp over training progress.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ValidationError

DEFAULT_KNOTS = (0.3, 0.7)


@dataclass
class CurriculumState:
    gamma: float = 0.05
    window: int = 50
    epsilon: float = 0.01
    step: int = 0
    ema_history: deque = field(default_factory=deque)

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValidationError("EMA rate gamma must lie in (0, 1]")
        if self.window < 1:
            raise ValidationError("window K must be >= 1")
        if not self.epsilon > 0:
            raise ValidationError("stability threshold epsilon must be positive")
        self.ema_history = deque(self.ema_history, maxlen=self.window + 1)

    @property
    def ema(self) -> float | None:
        return self.ema_history[-1] if self.ema_history else None


@dataclass(frozen=True)
class CurriculumWeight:
    t: float
    beta: float
    delta: float
    gate: bool
    w: float


def ema_update(state: CurriculumState, loss_ce: float) -> CurriculumState:
    """Push one classification loss; the first loss seeds the EMA."""
    loss_ce = float(loss_ce)
    if not math.isfinite(loss_ce):
        raise ValidationError(f"non-finite classification loss {loss_ce}")
    prev = state.ema
    ema = loss_ce if prev is None else (1.0 - state.gamma) * prev + state.gamma * loss_ce
    state.ema_history.append(ema)
    state.step += 1
    return state


def stability_delta(state: CurriculumState) -> float:
    """|EMA_t - EMA_{t-K}|, or +inf until K+1 EMA values exist."""
    hist = state.ema_history
    if len(hist) < state.window + 1:
        return math.inf
    return abs(hist[-1] - hist[0])


def check_knots(knots: Sequence[float]) -> tuple[float, float]:
    k1, k2 = (float(k) for k in knots)
    if not 0.0 < k1 < k2 < 1.0:
        raise ValidationError(f"curriculum breakpoints must satisfy 0 < k1 < k2 < 1, got {knots}")
    return k1, k2


def beta(t: float, knots: Sequence[float] = DEFAULT_KNOTS) -> float:
    """Piecewise-linear curriculum weight: 0.1 -> 0 on [0, k1), 0 -> 0.3 on
    [k1, k2), 0.3 -> 1.0 on [k2, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"progress t must lie in [0, 1], got {t}")
    k1, k2 = check_knots(knots)
    if t < k1:
        return 0.1 - 0.1 * t / k1
    if t < k2:
        return 0.3 * (t - k1) / (k2 - k1)
    return 0.3 + 0.7 * ((t - k2) / (1.0 - k2))


def lsbc_weight(t: float, state: CurriculumState, knots: Sequence[float] = DEFAULT_KNOTS) -> CurriculumWeight:
    b = beta(t, knots)
    delta = stability_delta(state)
    gate = delta < state.epsilon
    return CurriculumWeight(t, b, delta, gate, b if gate else 0.0)


def progress(step: int, total_steps: int) -> float:
    """Normalised progress after ``step`` of ``total_steps`` updates."""
    return min(1.0, max(0.0, step / total_steps))


@dataclass(frozen=True)
class TraceRow:
    step: int
    t: float
    beta: float
    delta: float
    gate: bool
    w: float


def curriculum_trace(total_steps: int, losses: Iterable[float], knots: Sequence[float] = DEFAULT_KNOTS,
                     gamma: float = 0.05, window: int = 50, epsilon: float = 0.01) -> list[TraceRow]:
    """Replay a loss stream through the gate; one row per update (1-based step)."""
    if total_steps < 1:
        raise ValidationError("total_steps must be >= 1")
    check_knots(knots)
    state = CurriculumState(gamma, window, epsilon)
    rows = []
    for loss in losses:
        if state.step >= total_steps:
            break
        ema_update(state, loss)
        cw = lsbc_weight(progress(state.step, total_steps), state, knots)
        rows.append(TraceRow(state.step, cw.t, cw.beta, cw.delta, cw.gate, cw.w))
    return rows

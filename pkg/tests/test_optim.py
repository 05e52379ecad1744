from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from peace import autodiff as ad
from peace.config import OptimConfig
from peace.errors import ValidationError
from peace.optim import AdamState, adamw_step, clip_grad_norm, global_norm, lr_schedule, warmup_steps


def test_zero_grad_no_decay_is_identity():
    p = {"w": ad.parameter(np.array([1.0, -2.0]))}
    adamw_step(p, {"w": np.zeros(2)}, AdamState(), OptimConfig(weight_decay=0.0), lr=0.1)
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_first_step_closed_form():
    cfg = OptimConfig(weight_decay=0.0)
    p = {"w": ad.parameter(np.array(0.5))}
    adamw_step(p, {"w": np.array(1.0)}, AdamState(), cfg, lr=0.1)
    # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    assert p["w"].data == pytest.approx(0.5 - 0.1 * 1.0 / (1.0 + 1e-8), abs=1e-15)


def test_decay_only_shrinks_by_lr_wd_theta():
    cfg = OptimConfig(weight_decay=0.01)
    p = {"w": ad.parameter(np.array([2.0, -4.0]))}
    adamw_step(p, {"w": np.zeros(2)}, AdamState(), cfg, lr=0.1)
    np.testing.assert_allclose(p["w"].data, [2.0 - 0.1 * 0.01 * 2.0, -4.0 + 0.1 * 0.01 * 4.0], rtol=0, atol=1e-15)


def test_second_step_matches_manual():
    cfg = OptimConfig(weight_decay=0.0)
    p = {"w": ad.parameter(np.array(0.0))}
    st_ = AdamState()
    adamw_step(p, {"w": np.array(1.0)}, st_, cfg, lr=0.01)
    adamw_step(p, {"w": np.array(-2.0)}, st_, cfg, lr=0.01)
    m = 0.9 * 0.1 + 0.1 * -2.0
    v = 0.999 * 0.001 + 0.001 * 4.0
    step2 = (m / (1 - 0.81)) / (math.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    assert p["w"].data == pytest.approx(-0.01 * (1.0 / (1.0 + 1e-8)) - 0.01 * step2, abs=1e-14)
    assert st_.step == 2


def test_non_finite_gradient_rejected():
    p = {"w": ad.parameter(np.zeros(2))}
    with pytest.raises(FloatingPointError):
        adamw_step(p, {"w": np.array([np.nan, 0.0])}, AdamState(), OptimConfig(), lr=0.1)


def test_clip_examples():
    g, n = clip_grad_norm({"a": np.array([6.0, 8.0])}, 5.0)
    np.testing.assert_allclose(g["a"], [3.0, 4.0])
    assert n == 10.0
    small = {"a": np.array([0.6, 0.8])}
    g, n = clip_grad_norm(small, 5.0)
    assert g["a"] is small["a"] and n == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        clip_grad_norm(small, 0.0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=10), st.floats(0.1, 10))
def test_post_clip_norm_bound(vals, max_norm):
    g, _ = clip_grad_norm({"a": np.array(vals), "b": np.array(vals[::-1]) * 0.5}, max_norm)
    assert global_norm(g) <= max_norm + 1e-9


def test_schedule_endpoints():
    cfg = OptimConfig(lr_init=1e-4)
    total, spe = 200, 10
    w = warmup_steps(cfg, total, spe)
    assert w == 50
    assert lr_schedule(0, cfg, total, spe) == 1e-5
    assert lr_schedule(w, cfg, total, spe) == pytest.approx(1e-4, abs=1e-18)
    assert abs(lr_schedule(total - 1, cfg, total, spe) - 1e-6) <= 1e-12
    lrs = [lr_schedule(s, cfg, total, spe) for s in range(total)]
    assert np.all(np.diff(lrs[:w + 1]) > 0) and np.all(np.diff(lrs[w:]) < 0)
    assert lr_schedule(3, cfg, total, spe, lr_init=2.5e-5) < 2.5e-5
    with pytest.raises(ValidationError):
        lr_schedule(total, cfg, total, spe)


def test_short_run_keeps_cosine_phase():
    cfg = OptimConfig(lr_init=1e-3, warmup_epochs=5)
    assert warmup_steps(cfg, 10, 10) == 4
    assert lr_schedule(9, cfg, 10, 10) == pytest.approx(1e-6, abs=1e-15)
    assert lr_schedule(0, cfg, 1, 1) == cfg.min_lr

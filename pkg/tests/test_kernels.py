"""The numba kernels and their numpy twins must agree."""
from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from peace import kernels


@pytest.mark.parametrize("b,c,lp,k,s", [(2, 3, 20, 5, 1), (1, 12, 103, 7, 4), (3, 2, 9, 3, 3)])
def test_im2col_twins_agree(b, c, lp, k, s, rng):
    xp = rng.normal(size=(b, c, lp))
    out_len = (lp - k) // s + 1
    a = kernels.im2col_1d_numpy(xp, k, s, out_len)
    n = kernels.im2col_1d_numba(xp, k, s, out_len)
    assert a.shape == (b, c * k, out_len)
    np.testing.assert_array_equal(a, n)
    # column o, row (ch, j) holds xp[ch, o*s + j]
    ch, j, o = c - 1, k - 1, out_len - 1
    assert a[b - 1, ch * k + j, o] == xp[b - 1, ch, o * s + j]


@pytest.mark.parametrize("b,c,lp,k,s", [(2, 3, 20, 5, 1), (1, 4, 50, 7, 4)])
def test_col2im_is_adjoint_of_im2col(b, c, lp, k, s, rng):
    out_len = (lp - k) // s + 1
    x = rng.normal(size=(b, c, lp))
    g = rng.normal(size=(b, c * k, out_len))
    lhs = np.sum(kernels.im2col_1d(x, k, s, out_len) * g)
    rhs = np.sum(x * kernels.col2im_1d(g, c, k, s, lp))
    assert lhs == pytest.approx(rhs, rel=1e-12)
    np.testing.assert_allclose(kernels.col2im_1d_numpy(g, c, k, s, lp), kernels.col2im_1d_numba(g, c, k, s, lp),
                               rtol=0, atol=1e-12)


scores_labels = st.integers(2, 40).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 6), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n)))


@given(scores_labels)
def test_auc_twins_agree(sl):
    s = np.array(sl[0], dtype=float) / 3.0   # coarse grid forces ties
    y = np.array(sl[1])
    a = kernels.mann_whitney_auc_numpy(s, y)
    n = kernels.mann_whitney_auc_numba(s, y.astype(np.uint8))
    if np.isnan(a):
        assert np.isnan(n)
    else:
        assert a == pytest.approx(n, abs=1e-12)


@given(scores_labels)
def test_f1_sweep_twins_agree(sl):
    s = np.array(sl[0], dtype=float)
    y = np.array(sl[1])
    m1, f1 = kernels.f1_at_midpoints_numpy(s, y)
    m2, f2 = kernels.f1_at_midpoints_numba(s, y.astype(np.uint8))
    np.testing.assert_array_equal(m1, m2)
    np.testing.assert_allclose(f1, f2, rtol=0, atol=1e-12)


def test_f1_sweep_matches_direct_count():
    s = np.array([0.1, 0.4, 0.6, 0.9])
    y = np.array([0, 1, 0, 1])
    mids, f1 = kernels.f1_at_midpoints(s, y)
    np.testing.assert_allclose(mids, [0.25, 0.5, 0.75])
    for m, f in zip(mids, f1):
        pred = s > m
        tp = np.sum(pred & (y == 1))
        assert f == pytest.approx(2 * tp / (pred.sum() + y.sum()))


def test_single_unique_score_has_no_candidates():
    mids, f1 = kernels.f1_at_midpoints(np.ones(4), np.array([1, 0, 1, 0]))
    assert mids.size == 0 and f1.size == 0


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, PEACE_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from peace import kernels; print(kernels.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_default_backend_is_numba():
    if os.environ.get("PEACE_DISABLE_NUMBA"):
        pytest.skip("numba disabled in this environment")
    assert kernels.backend() == "numba"

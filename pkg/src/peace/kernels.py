"""Hot inner loops, each with a numba kernel and a pure-numpy twin.

The public names (``im2col_1d``, ``col2im_1d``, ``mann_whitney_auc``,
``f1_at_midpoints``) dispatch to the numba kernels unless
``PEACE_DISABLE_NUMBA=1`` was set before import.  Both variants stay
importable (``*_numpy`` / ``*_numba``) so tests and the benchmark can
pit them against each other.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import rankdata

from ._jit import HAS_NUMBA, USE_NUMBA, njit

__all__ = [
    "im2col_1d",
    "col2im_1d",
    "mann_whitney_auc",
    "f1_at_midpoints",
    "USE_NUMBA",
]


# ---------------------------------------------------------------------------
# conv1d lowering
# ---------------------------------------------------------------------------

def im2col_1d_numpy(xp, kernel, stride, out_len):
    """[B, C, Lp] -> [B, C*K, L_out]; column ``o`` holds window ``o*stride``."""
    win = sliding_window_view(xp, kernel, axis=2)[:, :, : (out_len - 1) * stride + 1 : stride, :]
    b, c = xp.shape[:2]
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(b, c * kernel, out_len)


def col2im_1d_numpy(cols, channels, kernel, stride, padded_len):
    b, _, out_len = cols.shape
    cols = cols.reshape(b, channels, kernel, out_len)
    out = np.zeros((b, channels, padded_len), dtype=cols.dtype)
    span = (out_len - 1) * stride + 1
    for k in range(kernel):
        out[:, :, k : k + span : stride] += cols[:, :, k, :]
    return out


@njit
def im2col_1d_numba(xp, kernel, stride, out_len):
    b, c, _ = xp.shape
    cols = np.empty((b, c * kernel, out_len), dtype=xp.dtype)
    for i in range(b):
        for ch in range(c):
            for k in range(kernel):
                row = ch * kernel + k
                for o in range(out_len):
                    cols[i, row, o] = xp[i, ch, o * stride + k]
    return cols


@njit
def col2im_1d_numba(cols, channels, kernel, stride, padded_len):
    b = cols.shape[0]
    out_len = cols.shape[2]
    out = np.zeros((b, channels, padded_len), dtype=cols.dtype)
    for i in range(b):
        for ch in range(channels):
            for k in range(kernel):
                row = ch * kernel + k
                for o in range(out_len):
                    out[i, ch, o * stride + k] += cols[i, row, o]
    return out


# ---------------------------------------------------------------------------
# ranking metrics
# ---------------------------------------------------------------------------

def mann_whitney_auc_numpy(scores, labels):
    """(wins + 0.5 * ties) / (n_pos * n_neg); NaN when a class is absent."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(labels).astype(bool)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return np.nan
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


@njit
def mann_whitney_auc_numba(scores, labels):
    n = scores.shape[0]
    n_pos = 0
    for i in range(n):
        if labels[i] != 0:
            n_pos += 1
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return np.nan
    order = np.argsort(scores, kind="mergesort")
    rank_sum = 0.0
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and scores[order[stop]] == scores[order[start]]:
            stop += 1
        # 1-based average rank of the tie group
        avg = (start + 1 + stop) / 2.0
        for j in range(start, stop):
            if labels[order[j]] != 0:
                rank_sum += avg
        start = stop
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def f1_at_midpoints_numpy(scores, labels):
    """Candidate thresholds (midpoints of sorted unique scores) and F1 at each.

    Decision rule is strict ``score > threshold``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(labels).astype(bool)
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    cum_pos = np.concatenate(([0], np.cumsum(pos[order])))
    u = np.unique(s)
    if u.size < 2:
        return np.empty(0), np.empty(0)
    mids = (u[:-1] + u[1:]) / 2.0
    idx = np.searchsorted(s, u[1:], side="left")
    n_pred = s.size - idx
    n_true = int(pos.sum())
    tp = n_true - cum_pos[idx]
    denom = n_pred + n_true
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(denom > 0, 2.0 * tp / np.maximum(denom, 1), np.nan)
    return mids, f1


@njit
def f1_at_midpoints_numba(scores, labels):
    n = scores.shape[0]
    order = np.argsort(scores, kind="mergesort")
    n_true = 0
    for i in range(n):
        if labels[i] != 0:
            n_true += 1
    # walk tie groups from the top score down, accumulating predicted positives
    n_groups = 0
    for i in range(n):
        if i == 0 or scores[order[i]] != scores[order[i - 1]]:
            n_groups += 1
    if n_groups < 2:
        return np.empty(0), np.empty(0)
    mids = np.empty(n_groups - 1)
    f1 = np.empty(n_groups - 1)
    g = n_groups - 1
    tp = 0
    pred = 0
    stop = n
    while g > 0:
        start = stop - 1
        while start > 0 and scores[order[start - 1]] == scores[order[stop - 1]]:
            start -= 1
        for j in range(start, stop):
            pred += 1
            if labels[order[j]] != 0:
                tp += 1
        lower = scores[order[start - 1]]
        mids[g - 1] = (lower + scores[order[start]]) / 2.0
        denom = pred + n_true
        f1[g - 1] = 2.0 * tp / denom if denom > 0 else np.nan
        stop = start
        g -= 1
    return mids, f1


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _as_u8(labels):
    return np.ascontiguousarray(np.asarray(labels) != 0, dtype=np.uint8)


if USE_NUMBA:

    def im2col_1d(xp, kernel, stride, out_len):
        return im2col_1d_numba(np.ascontiguousarray(xp), kernel, stride, out_len)

    def col2im_1d(cols, channels, kernel, stride, padded_len):
        return col2im_1d_numba(np.ascontiguousarray(cols), channels, kernel, stride, padded_len)

    def mann_whitney_auc(scores, labels):
        return float(mann_whitney_auc_numba(np.ascontiguousarray(scores, dtype=np.float64), _as_u8(labels)))

    def f1_at_midpoints(scores, labels):
        return f1_at_midpoints_numba(np.ascontiguousarray(scores, dtype=np.float64), _as_u8(labels))

else:
    im2col_1d = im2col_1d_numpy
    col2im_1d = col2im_1d_numpy

    def mann_whitney_auc(scores, labels):
        return float(mann_whitney_auc_numpy(scores, labels))

    f1_at_midpoints = f1_at_midpoints_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


if not HAS_NUMBA:  # pragma: no cover
    im2col_1d_numba = im2col_1d_numpy
    col2im_1d_numba = col2im_1d_numpy
    mann_whitney_auc_numba = mann_whitney_auc_numpy
    f1_at_midpoints_numba = f1_at_midpoints_numpy

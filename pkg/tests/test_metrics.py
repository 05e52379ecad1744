from __future__ import annotations

import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peace.errors import ValidationError
from peace.metrics import auc, best_threshold, classification_report, macro_auc, optimize_thresholds


def brute_auc(s, y):
    pos = [a for a, b in zip(s, y) if b]
    neg = [a for a, b in zip(s, y) if not b]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def brute_best(s, y):
    """Every midpoint candidate, F1 by direct counting, smallest threshold on ties."""
    u = np.unique(s)
    best = None
    for m in (u[:-1] + u[1:]) / 2:
        pred = s > m
        tp = int(np.sum(pred & (y == 1)))
        f1 = 2 * tp / (pred.sum() + y.sum())
        if best is None or f1 > best[1]:
            best = (m, f1)
    return best


def test_auc_examples():
    assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auc([0.2, 0.9, 0.6, 0.1], [1, 0, 1, 0]) == 0.5
    assert auc([0.3, 0.4], [1, 1]) is None
    assert auc([0.5, 0.5, 0.5], [1, 0, 1]) == 0.5
    with pytest.raises(ValidationError):
        auc([0.1, 0.2], [1])


def test_auc_matches_pair_count_on_500_vectors():
    rng = np.random.default_rng(0)
    for _ in range(500):
        n = int(rng.integers(2, 40))
        s = rng.integers(0, 8, n) / 4.0
        y = rng.integers(0, 2, n)
        got = auc(s, y)
        if y.all() or not y.any():
            assert got is None
        else:
            assert got == brute_auc(s, y)


@given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=30, unique=True), st.integers(0, 2**31))
def test_auc_monotone_invariance_and_flip(scores, seed):
    s = np.array(scores, dtype=float)
    y = np.random.default_rng(seed).integers(0, 2, s.size)
    a = auc(s, y)
    if a is None:
        return
    assert auc(np.exp(s / 100.0) + s ** 3, y) == pytest.approx(a, abs=1e-12)
    assert a + auc(-s, y) == pytest.approx(1.0, abs=1e-12)


def test_threshold_examples():
    s = np.array([0.1, 0.4, 0.6, 0.9])
    y = np.array([0, 1, 0, 1])
    thr, f1 = best_threshold(s, y)
    assert (thr, f1) == brute_best(s, y) == (0.25, pytest.approx(0.8))
    thr, f1 = best_threshold([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert thr == pytest.approx(0.5) and f1 == 1.0
    assert best_threshold([0.1, 0.2], [0, 0]) == (math.inf, None)
    assert best_threshold([0.3, 0.3, 0.3], [1, 0, 0])[0] == -math.inf


@settings(max_examples=200)
@given(st.integers(2, 30).flatmap(lambda n: st.tuples(st.lists(st.integers(0, 9), min_size=n, max_size=n),
                                                    st.lists(st.integers(0, 1), min_size=n, max_size=n))))
def test_thresholds_match_exhaustive_search(sl):
    s, y = np.array(sl[0], dtype=float), np.array(sl[1])
    thr = optimize_thresholds(s[:, None], y[:, None])[0]
    if not y.any():
        assert thr == math.inf
        return
    ref = brute_best(s, y)
    if ref is None:
        assert thr == -math.inf
        return
    assert thr == pytest.approx(ref[0])
    pred = s > thr
    f1 = 2 * np.sum(pred & (y == 1)) / (pred.sum() + y.sum())
    assert f1 == pytest.approx(ref[1])


def test_report_confusion_counts():
    scores = np.array([[0.9, 0.2], [0.4, 0.7], [0.6, 0.1], [0.2, 0.8], [0.7, 0.6]])
    labels = np.array([[1, 0], [1, 1], [0, 0], [0, 1], [1, 0]])
    rep = classification_report(scores, labels, [0.5, 0.65], names=["A", "B"])
    a, b = rep.per_class
    # class A predictions: 1,0,1,0,1 vs labels 1,1,0,0,1 -> tp2 fp1 tn1 fn1
    assert (a.tp, a.fp, a.tn, a.fn) == (2, 1, 1, 1)
    assert a.acc == 0.6 and a.sensitivity == pytest.approx(2 / 3) and a.specificity == 0.5
    assert a.f1 == pytest.approx(4 / 6)
    # class B predictions: 0,1,0,1,0 vs labels 0,1,0,1,0 -> perfect
    assert (b.tp, b.fp, b.tn, b.fn) == (2, 0, 3, 0)
    assert b.acc == b.sensitivity == b.specificity == b.f1 == b.auc == 1.0
    assert rep.macro_auc == pytest.approx((a.auc + 1.0) / 2)


def test_report_inverted_and_undefined():
    y = np.array([[1, 0], [0, 0], [1, 0]])
    s = np.array([[0.1, 0.5], [0.9, 0.4], [0.2, 0.3]])
    rep = classification_report(s, y, [0.5, math.inf])
    assert rep.per_class[0].sensitivity == 0.0
    assert rep.per_class[1].auc is None and rep.per_class[1].f1 is None
    assert rep.macro["auc"] == rep.per_class[0].auc
    assert macro_auc(s, y) == rep.macro_auc
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0][:6] == ["label", "auc", "acc", "sensitivity", "specificity", "f1"]
    assert rows[-1][0] == "macro" and len(rows) == 4
    assert "Avg." in rep.format_table()


def test_report_shape_errors():
    with pytest.raises(ValidationError):
        classification_report(np.zeros((3, 2)), np.zeros((3, 2)), [0.5])
    with pytest.raises(ValidationError):
        optimize_thresholds(np.zeros(3), np.zeros(3))


@given(st.integers(0, 2**31))
def test_rates_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    s, y = rng.random((20, 3)), rng.integers(0, 2, (20, 3))
    rep = classification_report(s, y, optimize_thresholds(s, y))
    for c in rep.per_class:
        for v in (c.auc, c.acc, c.sensitivity, c.specificity, c.f1):
            assert v is None or 0.0 <= v <= 1.0

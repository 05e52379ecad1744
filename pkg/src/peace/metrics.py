"""Per-class AUC, F1-optimal thresholds and the five-metric report."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ValidationError

METRIC_NAMES = ("auc", "acc", "sensitivity", "specificity", "f1")


def auc(scores, labels) -> float | None:
    """Mann-Whitney AUC with ties counted 0.5; None if one class is absent."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    val = kernels.mann_whitney_auc(scores, labels)
    return None if math.isnan(val) else val


def best_threshold(scores, labels) -> tuple[float, float | None]:
    """F1-maximising midpoint threshold for one class (smallest on ties).

    No positives: +inf (never predict), F1 undefined.  A single distinct
    score leaves no midpoint, so -inf (always predict) is used.
    """
    labels = np.asarray(labels)
    n_pos = int((labels != 0).sum())
    if n_pos == 0:
        return math.inf, None
    mids, f1 = kernels.f1_at_midpoints(scores, labels)
    if mids.size == 0:
        return -math.inf, 2.0 * n_pos / (labels.size + n_pos)
    k = int(np.argmax(f1))
    return float(mids[k]), float(f1[k])


def optimize_thresholds(scores, labels) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ValidationError("scores and labels must both be N x C")
    return np.array([best_threshold(scores[:, c], labels[:, c])[0] for c in range(scores.shape[1])])


@dataclass
class ClassMetrics:
    name: str
    auc: float | None
    acc: float
    sensitivity: float | None
    specificity: float | None
    f1: float | None
    threshold: float
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0


@dataclass
class MetricsReport:
    per_class: list[ClassMetrics]
    macro: dict[str, float | None] = field(default_factory=dict)

    def __post_init__(self):
        if not self.macro:
            self.macro = {m: _mean([getattr(c, m) for c in self.per_class]) for m in METRIC_NAMES}

    @property
    def macro_auc(self) -> float | None:
        return self.macro["auc"]

    @property
    def macro_f1(self) -> float | None:
        return self.macro["f1"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("label",) + METRIC_NAMES + ("threshold", "tp", "fp", "tn", "fn"))
        for c in self.per_class:
            w.writerow([c.name] + [_fmt(getattr(c, m)) for m in METRIC_NAMES]
                       + [_fmt(c.threshold), c.tp, c.fp, c.tn, c.fn])
        w.writerow(["macro"] + [_fmt(self.macro[m]) for m in METRIC_NAMES] + ["", "", "", "", ""])
        return buf.getvalue()

    def format_table(self) -> str:
        head = f"{'Label':<10}" + "".join(f"{m.upper() if m in ('auc', 'acc') else m.capitalize():>13}"
                                          for m in METRIC_NAMES)
        lines = [head, "-" * len(head)]
        for c in self.per_class:
            lines.append(f"{c.name:<10}" + "".join(f"{_pct(getattr(c, m)):>13}" for m in METRIC_NAMES))
        lines.append("-" * len(head))
        lines.append(f"{'Avg.':<10}" + "".join(f"{_pct(self.macro[m]):>13}" for m in METRIC_NAMES))
        return "\n".join(lines)


def classification_report(scores, labels, thresholds, names: Sequence[str] | None = None) -> MetricsReport:
    """Confusion-derived metrics per class at ``score > threshold``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels) != 0
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if scores.shape != labels.shape or scores.ndim != 2 or thresholds.shape != (scores.shape[1],):
        raise ValidationError("scores/labels must be N x C with one threshold per class")
    names = list(names) if names is not None else [str(c) for c in range(scores.shape[1])]
    n = scores.shape[0]
    out = []
    for c in range(scores.shape[1]):
        pred = scores[:, c] > thresholds[c]
        y = labels[:, c]
        tp = int((pred & y).sum())
        fp = int((pred & ~y).sum())
        tn = int((~pred & ~y).sum())
        fn = int((~pred & y).sum())
        out.append(ClassMetrics(
            name=names[c],
            auc=auc(scores[:, c], y),
            acc=(tp + tn) / n if n else None,
            sensitivity=tp / (tp + fn) if tp + fn else None,
            specificity=tn / (tn + fp) if tn + fp else None,
            f1=2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else None,
            threshold=float(thresholds[c]), tp=tp, fp=fp, tn=tn, fn=fn,
        ))
    return MetricsReport(out)


def macro_auc(scores, labels) -> float | None:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    return _mean([auc(scores[:, c], labels[:, c]) for c in range(scores.shape[1])])


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _pct(v) -> str:
    return "-" if v is None else f"{100.0 * v:.2f}"

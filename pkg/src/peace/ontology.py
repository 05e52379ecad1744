"""Canonical 12-label space, source mapping tables, splits and few-shot subsets."""
from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .ecg_data import DATASET_TAGS, SPLITS, Dataset, RecordMeta
from .errors import ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Label:
    code: str
    full_name: str
    index: int

    def __str__(self) -> str:
        return self.code


_CANONICAL = (
    ("CRBBB", "complete right bundle branch block"),
    ("IRBBB", "incomplete RBBB"),
    ("LAFB", "left anterior fascicular block"),
    ("LAO/LAE", "left atrial enlargement"),
    ("LQTS", "long QT syndrome"),
    ("LVH", "left ventricular hypertrophy"),
    ("LVOLT", "low QRS voltage"),
    ("NORM", "normal ECG"),
    ("RAO/RAE", "right atrial enlargement"),
    ("RVH", "right ventricular hypertrophy"),
    ("STTC", "ST/T changes"),
    ("TAB_", "T-wave abnormality"),
)

LABELS: tuple[Label, ...] = tuple(Label(c, n, i) for i, (c, n) in enumerate(_CANONICAL))
CODES: tuple[str, ...] = tuple(lab.code for lab in LABELS)
BY_CODE: dict[str, Label] = {lab.code: lab for lab in LABELS}
N_LABELS = len(LABELS)


def label(code: str | Label) -> Label:
    if isinstance(code, Label):
        return code
    try:
        return BY_CODE[code]
    except KeyError:
        raise ValidationError(f"unknown canonical label {code!r}") from None


def normalize_raw(raw: str) -> str:
    return re.sub(r"\s+", " ", raw.strip()).lower()


@dataclass(frozen=True)
class MappingRow:
    raw: str
    target: Label
    full_name: str


@lru_cache(maxsize=None)
def mapping_rows(tag: str) -> tuple[MappingRow, ...]:
    """Rows of the bundled mapping table for ``tag``, in file order."""
    if tag not in ("mimic", "zzu", "ptbxl"):
        raise ValidationError(f"no mapping table for dataset {tag!r}")
    text = resources.files("peace").joinpath(f"data/mapping_{tag}.tsv").read_text(encoding="utf-8")
    reader = csv.DictReader(text.splitlines(), delimiter="\t")
    return tuple(MappingRow(r["raw"], label(r["canonical"]), r["full_name"]) for r in reader)


@lru_cache(maxsize=None)
def _table(tag: str) -> dict[str, Label]:
    return {normalize_raw(r.raw): r.target for r in mapping_rows(tag)}


def map_label(tag: str, raw: str) -> Label | None:
    if tag == "synthetic":
        return BY_CODE.get(raw.strip())
    if tag not in DATASET_TAGS:
        raise ValidationError(f"unknown dataset tag {tag!r}")
    return _table(tag).get(normalize_raw(raw))


def to_label_vector(labels: Iterable[Label | str]) -> np.ndarray:
    vec = np.zeros(N_LABELS, dtype=np.uint8)
    for lab in labels:
        vec[label(lab).index] = 1
    return vec


def build_dataset(metas: Sequence[RecordMeta]) -> tuple[Dataset, int]:
    """Map raw labels; records with no mappable label are dropped.

    Returns the dataset and the number of dropped records.
    """
    kept = []
    dropped = 0
    for m in metas:
        mapped = [lab for lab in (map_label(m.dataset_tag, r) for r in m.raw_labels) if lab is not None]
        if not mapped:
            dropped += 1
            continue
        kept.append((m, to_label_vector(mapped)))
    if dropped:
        log.info("dropped %d record(s) with no mappable label", dropped)
    return Dataset(kept), dropped


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def _target_sizes(n: int, ratios: Sequence[float]) -> np.ndarray:
    exact = np.asarray(ratios, dtype=np.float64) * n
    sizes = np.floor(exact).astype(int)
    rem = n - sizes.sum()
    order = np.argsort(-(exact - sizes), kind="stable")
    sizes[order[:rem]] += 1
    return sizes


def stratified_split(dataset: Dataset, ratios: Sequence[float] = (0.8, 0.1, 0.1),
                     seed: int = 42) -> Dataset:
    """Iterative multi-label stratification (rarest label first).

    Split sizes are then nudged to the largest-remainder targets by moving
    the records whose relocation disturbs the per-label quotas least.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValidationError(f"ratios must be three nonnegative numbers summing to 1, got {ratios}")
    n = len(dataset)
    if n == 0:
        raise ValidationError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    y = dataset.label_matrix().astype(np.int64)
    targets = _target_sizes(n, ratios)
    want_size = targets.astype(np.float64)
    want_lab = ratios[:, None] * y.sum(axis=0)[None, :]
    assign = np.full(n, -1)
    order = rng.permutation(n)

    while True:
        pending = order[(assign[order] < 0) & (y[order].sum(axis=1) > 0)]
        if pending.size == 0:
            break
        counts = y[pending].sum(axis=0)
        counts = np.where(counts > 0, counts, np.iinfo(np.int64).max)
        c = int(np.argmin(counts))
        for i in pending[y[pending, c] == 1]:
            open_ = want_size > 0
            cand = np.flatnonzero(open_) if open_.any() else np.arange(3)
            best = cand[want_lab[cand, c] == want_lab[cand, c].max()]
            if best.size > 1:
                best = best[want_size[best] == want_size[best].max()]
            j = int(best[0]) if best.size == 1 else int(rng.choice(best))
            assign[i] = j
            want_lab[j] -= y[i]
            want_size[j] -= 1
    for i in order[assign[order] < 0]:
        j = int(np.argmax(want_size))
        assign[i] = j
        want_size[j] -= 1

    _repair_sizes(assign, y, ratios, targets)
    _refine_by_swaps(assign, y, ratios)
    split = {m.id: SPLITS[assign[k]] for k, (m, _) in enumerate(dataset.records)}
    return Dataset(dataset.records, split, dataset.signals, dataset.root)


def _repair_sizes(assign: np.ndarray, y: np.ndarray, ratios: np.ndarray, targets: np.ndarray) -> None:
    totals = y.sum(axis=0)
    while True:
        sizes = np.bincount(assign, minlength=3)
        over = np.flatnonzero(sizes > targets)
        under = np.flatnonzero(sizes < targets)
        if over.size == 0 or under.size == 0:
            return
        src, dst = int(over[0]), int(under[0])
        counts = np.stack([y[assign == j].sum(axis=0) for j in range(3)])
        dev = counts - ratios[:, None] * totals[None, :]
        members = np.flatnonzero(assign == src)
        yk = y[members]
        # change in squared quota deviation if each member moves src -> dst
        delta = (((dev[src] - yk) ** 2 - dev[src] ** 2) + ((dev[dst] + yk) ** 2 - dev[dst] ** 2)).sum(axis=1)
        assign[members[int(np.argmin(delta))]] = dst


_SWAP_BLOCK = 2_000_000


def _refine_by_swaps(assign: np.ndarray, y: np.ndarray, ratios: np.ndarray, max_rounds: int = 500) -> None:
    """Swap record pairs across splits while that lowers the relative quota error.

    Sizes are untouched. The error is sum_{j,c} ((count_jc - want_jc) / want_jc)^2
    over labels with positives, so small splits are weighted by their quotas.
    """
    totals = y.sum(axis=0).astype(np.float64)
    want = ratios[:, None] * totals[None, :]
    live = want > 0
    scale = np.where(live, 1.0 / np.where(live, want, 1.0), 0.0) ** 2
    yf = y.astype(np.float64)
    for _ in range(max_rounds):
        counts = np.stack([yf[assign == j].sum(axis=0) for j in range(3)])
        dev = counts - want
        best = (0.0, -1, -1)
        for a in range(3):
            for b in range(a + 1, 3):
                ia, ib = np.flatnonzero(assign == a), np.flatnonzero(assign == b)
                if ia.size == 0 or ib.size == 0:
                    continue
                step = max(1, _SWAP_BLOCK // (ib.size * y.shape[1]))
                for lo in range(0, ia.size, step):
                    blk = ia[lo:lo + step]
                    # moving i: a -> b and j: b -> a shifts dev_a by (y_j - y_i), dev_b by (y_i - y_j)
                    diff = yf[ib][None, :, :] - yf[blk][:, None, :]
                    gain = (((dev[a] + diff) ** 2 - dev[a] ** 2) * scale[a]
                            + ((dev[b] - diff) ** 2 - dev[b] ** 2) * scale[b]).sum(axis=2)
                    k = np.unravel_index(int(np.argmin(gain)), gain.shape)
                    if gain[k] < best[0] - 1e-12:
                        best = (float(gain[k]), int(blk[k[0]]), int(ib[k[1]]))
        if best[1] < 0:
            return
        i, j = best[1], best[2]
        assign[i], assign[j] = assign[j], assign[i]


def sample_few_shot(train: Dataset, n_per_class: int, seed: int = 0,
                    labels: Sequence[int] | None = None) -> Dataset:
    """Up to ``n_per_class`` positives per class, rarest class first.

    A selected record counts toward every class it carries, so classes
    visited later may already be (partly) covered.  Restricted to the
    train split when the dataset carries a split assignment.
    """
    if n_per_class < 1:
        raise ValidationError("n_per_class must be >= 1")
    ids = train.ids("train") if train.split_assignment is not None else train.ids()
    if not ids:
        return train.subset([])
    rng = np.random.default_rng(seed)
    ids = [ids[k] for k in rng.permutation(len(ids))]
    y = train.label_matrix(ids).astype(np.int64)
    classes = list(range(N_LABELS)) if labels is None else list(labels)
    avail = y[:, classes].sum(axis=0)
    chosen = np.zeros(len(ids), dtype=bool)
    for c in [classes[k] for k in np.argsort(avail, kind="stable")]:
        need = min(n_per_class, int(y[:, c].sum())) - int(y[chosen, c].sum())
        if need <= 0:
            continue
        cand = np.flatnonzero((y[:, c] == 1) & ~chosen)[:need]
        chosen[cand] = True
    return train.subset([ids[k] for k in np.flatnonzero(chosen)])

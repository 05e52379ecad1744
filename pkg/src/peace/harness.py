"""Training loop, the three transfer regimes and repeated-run aggregation."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .caf import CurriculumState, beta, ema_update, lsbc_weight, progress, stability_delta
from .config import RunConfig, config_hash, override
from .ecg_data import Dataset
from .errors import ConfigError, ValidationError
from .lsbc import lsbc_loss
from .metrics import METRIC_NAMES, MetricsReport, classification_report, macro_auc, optimize_thresholds
from .model import PeaceModel
from .objective import class_weights, total_loss, weighted_bce
from .ontology import sample_few_shot
from .optim import AdamState, adamw_step, clip_grad_norm, lr_schedule
from .synthetic import SyntheticSpec, make_synthetic_dataset

log = logging.getLogger(__name__)

SWEEP_N = (5, 10, 20, 50, 100)
TRACE_FIELDS = ("step", "epoch", "t", "lr", "beta", "delta", "gate", "w", "ce_ecg", "ce_rep", "lsbc", "total")
EPOCH_FIELDS = ("epoch", "steps", "mean_total", "mean_ce_ecg", "mean_ce_rep", "mean_lsbc", "val_metric")


def load_arrays(data: Dataset, ids: Sequence[str], input_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack record payloads into [N, 12, L] float64 and labels into [N, 12]."""
    ids = list(ids)
    y = data.label_matrix(ids)
    if not ids:
        return np.zeros((0, 12, input_len)), y
    xs = []
    for i in ids:
        rec = data.signal(i)
        if rec.n_samples != input_len:
            raise ValidationError(f"{i}: {rec.n_samples} samples, encoder expects {input_len}")
        xs.append(rec.samples)
    return np.stack(xs).astype(np.float64), y


def dataset_from_config(cfg: RunConfig) -> Dataset:
    d = cfg.data
    if d.manifest is not None:
        from .ecg_data import read_manifest
        from .ontology import build_dataset, stratified_split
        root = Path(d.root) if d.root else Path(d.manifest).parent
        ds, _ = build_dataset(read_manifest(d.manifest))
        ds.root = root
        return stratified_split(ds, seed=d.split_seed)
    return make_synthetic_dataset(SyntheticSpec(
        n_classes=d.n_classes, per_class=d.per_class, seed=d.seed, fs=d.fs, seconds=d.seconds,
        noise=d.noise, rate_factor=d.rate_factor, amp_factor=d.amp_factor, split_seed=d.split_seed))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float | None = None


def _val_metric(model: PeaceModel, x, y, select: str) -> float | None:
    if x.shape[0] == 0:
        return None
    scores = model.predict_scores(x)
    y = y[:, model.cols]
    if select == "auc":
        return macro_auc(scores, y)
    rep = classification_report(scores, y, optimize_thresholds(scores, y))
    return rep.macro_f1


def _batch_weight(cfg: RunConfig, state: CurriculumState, t: float) -> tuple[float, float, bool]:
    """(beta, w, gate) for the configured curriculum mode."""
    mode = cfg.caf.mode
    if mode == "gated":
        cw = lsbc_weight(t, state, cfg.caf.knots)
        return cw.beta, cw.w, cw.gate
    b = beta(t, cfg.caf.knots)
    if mode == "schedule":
        return b, b, True
    if mode == "constant":
        return b, 1.0, True
    return b, 0.0, False


def train(model: PeaceModel, cfg: RunConfig, train_xy, val_xy, seed: int, select: str = "auc",
          frozen: Sequence[str] = ()) -> TrainLog:
    """Optimise ``model`` in place; the best validation epoch's weights are restored at the end."""
    x_tr, y_tr = train_xy
    x_va, y_va = val_xy
    n = x_tr.shape[0]
    if n == 0:
        raise ValidationError("empty training set")
    oc = cfg.optim
    lr_peak = oc.lr_for(cfg.regime.regime)
    cols = model.cols
    cw = class_weights(y_tr[:, cols].sum(axis=0), (cfg.objective.clip_min, cfg.objective.clip_max))
    params = model.trainable(frozen)
    all_params = model.named_parameters()
    spe = math.ceil(n / oc.batch_size)
    total = oc.epochs * spe
    if oc.max_steps is not None:
        total = min(total, oc.max_steps)
    rng = np.random.default_rng(seed)
    state = CurriculumState(cfg.caf.gamma, cfg.caf.window, cfg.caf.epsilon)
    adam = AdamState()
    tl = TrainLog()
    best_state = model.state_dict()
    step = 0
    epoch = 0
    while step < total:
        epoch += 1
        order = rng.permutation(n)
        sums = np.zeros(4)
        taken = 0
        for s in range(0, n, oc.batch_size):
            if step >= total:
                break
            idx = order[s: s + oc.batch_size]
            yb = y_tr[idx]
            out = model.forward(x_tr[idx], yb)
            target = yb[:, cols]
            ce_ecg = weighted_bce(out.logits_ecg, target, cw)
            ce_rep = weighted_bce(out.logits_rep, target, cw)
            ema_update(state, ce_ecg.item() + ce_rep.item())
            t = progress(step + 1, total)
            b, w, gate = _batch_weight(cfg, state, t)
            lsbc = lsbc_loss(out.z_ecg, out.z_rep, target, cfg.lsbc.tau)
            loss = total_loss(ce_ecg, ce_rep, lsbc, w, cfg.objective)
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite loss at step {step + 1}")
            for p in all_params.values():
                p.zero_grad()
            loss.backward()
            grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
            grads, _ = clip_grad_norm(grads, oc.grad_clip_norm)
            lr = lr_schedule(step, oc, total, spe, lr_peak)
            adamw_step(params, grads, adam, oc, lr)
            step += 1
            taken += 1
            vals = (loss.item(), ce_ecg.item(), ce_rep.item(), lsbc.item())
            sums += vals
            tl.trace.append({"step": step, "epoch": epoch, "t": t, "lr": lr, "beta": b,
                             "delta": stability_delta(state), "gate": gate, "w": w,
                             "ce_ecg": vals[1], "ce_rep": vals[2], "lsbc": vals[3], "total": vals[0]})
        metric = _val_metric(model, x_va, y_va, select)
        means = sums / max(taken, 1)
        tl.epochs.append({"epoch": epoch, "steps": taken, "mean_total": means[0], "mean_ce_ecg": means[1],
                          "mean_ce_rep": means[2], "mean_lsbc": means[3], "val_metric": metric})
        if metric is not None and (tl.best_metric is None or metric > tl.best_metric):
            tl.best_metric, tl.best_epoch = metric, epoch
            best_state = model.state_dict()
        log.debug("epoch %d: loss %.4f val %s", epoch, means[0], metric)
    model.load_state_dict(best_state)
    return tl


# ---------------------------------------------------------------------------
# regimes
# ---------------------------------------------------------------------------

@dataclass
class RepeatResult:
    repeat: int
    seed: int
    n_train: int
    report: MetricsReport
    log: TrainLog
    param_hash_before: str
    param_hash_after: str
    frozen_unchanged: bool
    state: dict | None = None


@dataclass
class RunResult:
    regime: str
    config_hash: str
    labels: tuple[str, ...]
    repeats: list[RepeatResult]

    def aggregate(self) -> dict[str, tuple[float, float]]:
        """Mean and (n-1) standard deviation of each macro metric across repeats."""
        out = {}
        for m in METRIC_NAMES:
            vals = np.array([np.nan if r.report.macro[m] is None else r.report.macro[m] for r in self.repeats])
            std = float(np.std(vals, ddof=1)) if vals.size > 1 else math.nan
            out[m] = (float(np.mean(vals)), std)
        return out

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("config_hash", "regime", "repeat", "seed", "n_train", "best_epoch", "label") + METRIC_NAMES)
        for r in self.repeats:
            for c in r.report.per_class:
                w.writerow([self.config_hash, self.regime, r.repeat, r.seed, r.n_train, r.log.best_epoch, c.name]
                           + [_num(getattr(c, m)) for m in METRIC_NAMES])
            w.writerow([self.config_hash, self.regime, r.repeat, r.seed, r.n_train, r.log.best_epoch, "macro"]
                       + [_num(r.report.macro[m]) for m in METRIC_NAMES])
        agg = self.aggregate()
        for stat, k in (("mean", 0), ("std", 1)):
            w.writerow([self.config_hash, self.regime, stat, "", "", "", "macro"]
                       + [_num(agg[m][k]) for m in METRIC_NAMES])
        return buf.getvalue()

    def epochs_csv(self) -> str:
        return _rows_csv(("config_hash", "repeat") + EPOCH_FIELDS,
                         [dict(row, config_hash=self.config_hash, repeat=r.repeat)
                          for r in self.repeats for row in r.log.epochs])

    def trace_csv(self) -> str:
        return _rows_csv(("config_hash", "repeat") + TRACE_FIELDS,
                         [dict(row, config_hash=self.config_hash, repeat=r.repeat)
                          for r in self.repeats for row in r.log.trace])

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"summary": out / "run_result.csv", "epochs": out / "epochs.csv", "trace": out / "trace.csv"}
        paths["summary"].write_text(self.summary_csv(), encoding="utf-8")
        paths["epochs"].write_text(self.epochs_csv(), encoding="utf-8")
        paths["trace"].write_text(self.trace_csv(), encoding="utf-8")
        return paths


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _rows_csv(fields, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        w.writerow([row[f] if isinstance(row[f], str) else _num(row[f]) for f in fields])
    return buf.getvalue()


def _frozen_for(cfg: RunConfig) -> tuple[str, ...]:
    from .config import PARAM_GROUPS
    return PARAM_GROUPS if cfg.regime.regime == "zeroshot" else tuple(cfg.regime.frozen_groups)


def run_once(cfg: RunConfig, data: Dataset, seed: int, repeat: int = 0,
             init_state: dict | None = None, keep_state: bool = False) -> RepeatResult:
    reg = cfg.regime
    labels = cfg.data.label_codes()
    model = PeaceModel.init(cfg, labels, seed)
    if init_state is not None:
        model.load_state_dict(init_state)
    frozen = _frozen_for(cfg)
    before = model.param_hash()
    frozen_before = {k: t.data.copy() for k, t in model.named_parameters().items()
                     if k.split(".", 1)[0] in frozen}
    L = cfg.encoder.input_len
    val = load_arrays(data, data.ids("val"), L)
    test = load_arrays(data, data.ids("test"), L)
    tl = TrainLog()
    n_train = 0
    if reg.regime != "zeroshot":
        if reg.regime == "fewshot":
            sub = sample_few_shot(data, reg.n_per_class, seed=seed, labels=model.cols)
            train_ids = sub.ids()
        else:
            train_ids = data.ids("train")
        n_train = len(train_ids)
        tr = load_arrays(data, train_ids, L)
        tl = train(model, cfg, tr, val, seed, "f1" if reg.regime == "fewshot" else "auc", frozen)
    after = model.param_hash()
    unchanged = all(np.array_equal(model.named_parameters()[k].data, v) for k, v in frozen_before.items())
    cols = model.cols
    thr = optimize_thresholds(model.predict_scores(val[0]), val[1][:, cols])
    report = classification_report(model.predict_scores(test[0]), test[1][:, cols], thr,
                                   [lab.code for lab in model.labels])
    return RepeatResult(repeat, seed, n_train, report, tl, before, after, unchanged,
                        model.state_dict() if keep_state else None)


def run_regime(cfg: RunConfig, data: Dataset, repeats: int = 1, init_state: dict | None = None,
               keep_state: bool = False) -> RunResult:
    """Repeat ``run_once`` with seeds ``optim.seed + r``; everything else identical."""
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    cfg.validate()
    if data.split_assignment is None:
        raise ValidationError("run_regime needs a dataset with train/val/test splits")
    results = [run_once(cfg, data, cfg.optim.seed + r, r, init_state, keep_state) for r in range(repeats)]
    return RunResult(cfg.regime.regime, config_hash(cfg), cfg.data.label_codes(), results)


# ---------------------------------------------------------------------------
# sample-efficiency sweep
# ---------------------------------------------------------------------------

SWEEP_FIELDS = ("N", "mean_auc", "std", "delta_gain")


@dataclass
class SweepTable:
    config_hash: str
    rows: list[dict]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_FIELDS)
        for r in self.rows:
            w.writerow([r["N"], _num(r["mean_auc"]), _num(r["std"]), _num(r["delta_gain"])])
        return buf.getvalue()

    def format_table(self) -> str:
        lines = [f"{'Configuration':<14}{'AUC (Mean+-Std)':>20}{'Delta Gain':>12}"]
        for r in self.rows:
            std = "-" if r["std"] is None or math.isnan(r["std"]) else f"{100 * r['std']:.2f}"
            gain = "--" if r["delta_gain"] is None else f"{100 * r['delta_gain']:+.2f}"
            auc = f"{100 * r['mean_auc']:.2f} +- {std}"
            lines.append(f"{str(r['N']) + '-shot':<14}{auc:>20}{gain:>12}")
        return "\n".join(lines)


def sample_efficiency_sweep(cfg: RunConfig, data: Dataset, n_list: Sequence[int] = SWEEP_N,
                            repeats: int = 1, init_state: dict | None = None) -> SweepTable:
    rows = []
    prev = None
    for n in n_list:
        c = override(cfg, regime={"regime": "fewshot", "n_per_class": int(n)})
        res = run_regime(c, data, repeats, init_state)
        mean, std = res.aggregate()["auc"]
        rows.append({"N": int(n), "mean_auc": mean, "std": std,
                     "delta_gain": None if prev is None else mean - prev})
        prev = mean
    return SweepTable(config_hash(cfg), rows)

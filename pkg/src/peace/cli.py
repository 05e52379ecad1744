"""``peace`` command line: preprocess, map-labels, train, eval, schedule, sweep.

Exit codes: 0 success, 1 invalid input (config, manifest, files), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import caf
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, config_hash, load_config, override, to_dict
from .ecg_data import RecordMeta, load_record, read_manifest, write_manifest, write_record
from .errors import PeaceError, ValidationError
from .harness import SWEEP_N, dataset_from_config, load_arrays, run_regime, sample_efficiency_sweep
from .metrics import classification_report, optimize_thresholds
from .model import PeaceModel
from .ontology import map_label
from .signal_pipeline import STAGES, fit_scaler, shape_records, standardize
from .svg import line_chart

log = logging.getLogger("peace")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(None), help="run config (JSON)")
    parser.add_argument("--seed", type=int, default=d(None), help="override optim.seed")
    parser.add_argument("--out", default=d(None), help="output directory (default: output.dir)")
    parser.add_argument("--repeats", type=int, default=d(1), help="independent repeats")
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="peace", description="Adult-to-pediatric ECG transfer toolkit.")
    _globals(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        sp = sub.add_parser(name, help=help_)
        _globals(sp, suppress=True)
        return sp

    sp = cmd("preprocess", "run the signal pipeline over a manifest")
    sp.add_argument("manifest")
    sp.add_argument("--root", help="signal root (default: $PEACE_DATA_ROOT or the manifest's directory)")
    sp.add_argument("--dry-run", action="store_true", help="print the plan, write nothing")
    sp.add_argument("--workers", type=int, default=1)

    sp = cmd("map-labels", "map raw labels to the canonical ontology")
    sp.add_argument("manifest")

    sp = cmd("train", "train (or, for zeroshot, just evaluate) a model")
    sp.add_argument("--regime", choices=("zeroshot", "fewshot", "full"))
    sp.add_argument("--n-per-class", type=int)
    sp.add_argument("--init", help="checkpoint to start from")

    sp = cmd("eval", "evaluate a checkpoint, or score files")
    sp.add_argument("--checkpoint")
    sp.add_argument("--scores", help="CSV of scores (header: label codes)")
    sp.add_argument("--labels", help="CSV of 0/1 targets matching --scores")

    sp = cmd("schedule", "trace the curriculum weight")
    sp.add_argument("--steps", type=int, default=1000)
    sp.add_argument("--knots", type=float, nargs=2)
    sp.add_argument("--losses", help="file with one classification loss per line")

    sp = cmd("sweep", "few-shot sample-efficiency sweep")
    sp.add_argument("--n-list", type=int, nargs="+", default=list(SWEEP_N))
    sp.add_argument("--init", help="checkpoint to start from")
    return p


# ---------------------------------------------------------------------------

def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = override(cfg, optim={"seed": args.seed})
    root = os.environ.get("PEACE_DATA_ROOT")
    if root and cfg.data.root is None:
        cfg = override(cfg, data={"root": root})
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out if args.out is not None else cfg.output.dir)


def _write_config(out: Path, cfg: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    blob = dict(to_dict(cfg), config_hash=config_hash(cfg))
    (out / "config.json").write_text(json.dumps(blob, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    pc = cfg.pipeline
    root = Path(args.root or os.environ.get("PEACE_DATA_ROOT") or Path(args.manifest).parent)
    metas = read_manifest(args.manifest)
    out = _out_dir(args, cfg)
    stages = [s for s in STAGES if s != "calibrate" or pc.calibrate]
    if not pc.bandlimit:
        stages.remove("bandlimit")
    if not pc.standardize:
        stages.remove("standardize")
    print(f"plan: {len(metas)} record(s) from {root} -> {out}; stages: {' -> '.join(stages)}")
    if args.dry_run:
        return EXIT_OK
    if pc.calibrate:
        raise ValidationError("pipeline.calibrate needs reference statistics; use the library API")
    failures: list[str] = []

    def one(meta):
        try:
            return shape_records([load_record(meta, root)], pc)[0]
        except (PeaceError, OSError, ValueError) as exc:
            failures.append(f"{meta.id}: {exc}")
            return None

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        shaped = list(pool.map(one, metas))
    kept = [(m, r) for m, r in zip(metas, shaped) if r is not None]
    stats = None
    if pc.standardize and kept:
        stats = fit_scaler([r for _, r in kept])
        kept = [(m, standardize(r, stats)) for m, r in kept]
    out.mkdir(parents=True, exist_ok=True)
    new_metas = []
    for m, r in kept:
        path = write_record(r, out)
        new_metas.append(RecordMeta(m.id, path.name, m.raw_labels, m.dataset_tag, r.fs))
    write_manifest(new_metas, out / "manifest.jsonl")
    info = {"stages": stages, "config_hash": config_hash(cfg), "records": len(new_metas),
            "scaler": None if stats is None else stats.to_dict()}
    (out / "preprocess.json").write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")
    _write_config(out, cfg)
    log.info("stage order: %s", " -> ".join(stages))
    for f in failures:
        print(f"error: {f}", file=sys.stderr)
    print(f"wrote {len(new_metas)} record(s); {len(failures)} failure(s)")
    return EXIT_INVALID if failures else EXIT_OK


def cmd_map_labels(args) -> int:
    metas = read_manifest(args.manifest)
    dropped = 0
    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    w.writerow(("id", "dataset", "labels", "unmapped"))
    for m in metas:
        mapped, missing = [], []
        for raw in m.raw_labels:
            lab = map_label(m.dataset_tag, raw)
            if lab is None:
                missing.append(raw)
            elif lab.code not in mapped:
                mapped.append(lab.code)
        dropped += not mapped
        w.writerow((m.id, m.dataset_tag, ",".join(mapped), "|".join(missing)))
    print(f"{len(metas)} record(s), {dropped} with no mappable label", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    reg = {}
    if args.regime:
        reg["regime"] = args.regime
    if args.n_per_class is not None:
        reg["n_per_class"] = args.n_per_class
    if reg:
        cfg = override(cfg, regime=reg)
    init = load_checkpoint(args.init)[0] if args.init else None
    data = dataset_from_config(cfg)
    res = run_regime(cfg, data, args.repeats, init_state=init, keep_state=True)
    out = _out_dir(args, cfg)
    res.write(out)
    _write_config(out, cfg)
    best = res.repeats[0]
    save_checkpoint(out / "checkpoint.pck", best.state,
                    {"config_hash": res.config_hash, "labels": list(res.labels), "seed": best.seed,
                     "config": to_dict(cfg)})
    print(best.report.format_table())
    mean, std = res.aggregate()["auc"]
    print(f"macro AUC {mean:.4f} (std {std:.4f}) over {args.repeats} repeat(s); config {res.config_hash}")
    return EXIT_OK


def _read_matrix(path: str) -> tuple[list[str], np.ndarray]:
    rows = list(csv.reader(io.StringIO(Path(path).read_text(encoding="utf-8"))))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    try:
        return rows[0], np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    if args.scores or args.labels:
        if not (args.scores and args.labels):
            raise ValidationError("--scores and --labels go together")
        names, scores = _read_matrix(args.scores)
        names_y, y = _read_matrix(args.labels)
        if names != names_y or scores.shape != y.shape:
            raise ValidationError("score and label files must share header and shape")
        report = classification_report(scores, y, optimize_thresholds(scores, y), names)
        chash = config_hash(cfg)
    else:
        if not args.checkpoint:
            raise ValidationError("eval needs --checkpoint or --scores/--labels")
        state, meta = load_checkpoint(args.checkpoint)
        labels = meta.get("labels") or cfg.data.label_codes()
        model = PeaceModel.init(cfg, labels, 0)
        model.load_state_dict(state)
        data = dataset_from_config(cfg)
        L = cfg.encoder.input_len
        xv, yv = load_arrays(data, data.ids("val"), L)
        xt, yt = load_arrays(data, data.ids("test"), L)
        thr = optimize_thresholds(model.predict_scores(xv), yv[:, model.cols])
        report = classification_report(model.predict_scores(xt), yt[:, model.cols], thr, list(labels))
        chash = config_hash(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(f"# config_hash={chash}\n" + report.to_csv(), encoding="utf-8")
    print(report.format_table())
    return EXIT_OK


def _default_losses(n: int) -> list[float]:
    # smooth decay that flattens out, so the gate eventually opens
    return [0.3 + 0.7 * math.exp(-s / max(1.0, n / 6.0)) for s in range(n)]


def cmd_schedule(args) -> int:
    cfg = _config(args)
    if args.steps < 1:
        raise ValidationError("--steps must be >= 1")
    knots = tuple(args.knots) if args.knots else cfg.caf.knots
    caf.check_knots(knots)
    if args.losses:
        text = Path(args.losses).read_text(encoding="utf-8")
        try:
            losses = [float(x) for x in text.split()]
        except ValueError as exc:
            raise ValidationError(f"{args.losses}: {exc}") from None
    else:
        losses = _default_losses(args.steps)
    rows = caf.curriculum_trace(args.steps, losses, knots, cfg.caf.gamma, cfg.caf.window, cfg.caf.epsilon)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("config_hash", "step", "t", "beta", "delta", "gate", "w"))
    for r in rows:
        w.writerow((chash, r.step, repr(r.t), repr(r.beta), repr(r.delta), int(r.gate), repr(r.w)))
    (out / "caf_trace.csv").write_text(buf.getvalue(), encoding="utf-8")
    if cfg.output.svg:
        svg = line_chart([r.t for r in rows], {"beta": [r.beta for r in rows], "w": [r.w for r in rows]},
                         title=f"curriculum weight, knots {knots[0]:g}/{knots[1]:g}", x_label="t")
        (out / "caf_trace.svg").write_text(svg, encoding="utf-8")
    opened = next((r.step for r in rows if r.gate), None)
    print(f"{len(rows)} step(s); gate first open at step {opened}; written to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    init = load_checkpoint(args.init)[0] if args.init else None
    data = dataset_from_config(cfg)
    table = sample_efficiency_sweep(cfg, data, args.n_list, args.repeats, init)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(f"# config_hash={table.config_hash}\n" + table.to_csv(), encoding="utf-8")
    if cfg.output.svg:
        svg = line_chart([r["N"] for r in table.rows], {"macro AUC": [r["mean_auc"] for r in table.rows]},
                         title="sample efficiency", x_label="samples per class")
        (out / "sweep.svg").write_text(svg, encoding="utf-8")
    _write_config(out, cfg)
    print(table.format_table())
    return EXIT_OK


COMMANDS = {"preprocess": cmd_preprocess, "map-labels": cmd_map_labels, "train": cmd_train,
            "eval": cmd_eval, "schedule": cmd_schedule, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.repeats < 1:
        print("error: --repeats must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except (PeaceError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - top-level runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

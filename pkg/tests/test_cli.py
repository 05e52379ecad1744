from __future__ import annotations

import csv
import io
import json

import numpy as np
import pytest

from conftest import SMALL
from peace import caf
from peace.checkpoint import load_checkpoint
from peace.cli import main
from peace.config import PARAM_GROUPS, config_hash, load_config
from peace.ecg_data import EcgRecord, RecordMeta, load_record, read_manifest, write_manifest, write_record
from peace.model import PeaceModel


def _csv(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


@pytest.fixture
def small_cfg_file(tmp_path):
    obj = {k: dict(v) for k, v in SMALL.items()}
    obj["optim"] = dict(obj["optim"], max_steps=3)
    p = tmp_path / "small.json"
    p.write_text(json.dumps(obj))
    return p


def test_schedule_beta_matches_caf(tmp_path):
    assert main(["schedule", "--out", str(tmp_path)]) == 0
    rows = _csv(tmp_path / "caf_trace.csv")
    assert len(rows) == 1000
    assert all(float(r["beta"]) == caf.beta(float(r["t"])) for r in rows)
    assert all(float(r["w"]) == (float(r["beta"]) if r["gate"] == "1" else 0.0) for r in rows)
    assert {r["config_hash"] for r in rows} == {config_hash(load_config(None))}
    assert (tmp_path / "caf_trace.svg").read_text().startswith("<svg")


def test_schedule_knot_override_and_losses(tmp_path):
    losses = tmp_path / "l.txt"
    losses.write_text("\n".join(["0.5"] * 20))
    assert main(["schedule", "--steps", "10", "--knots", "0.2", "0.6", "--losses", str(losses),
                 "--out", str(tmp_path)]) == 0
    rows = {round(float(r["t"]), 9): float(r["beta"]) for r in _csv(tmp_path / "caf_trace.csv")}
    assert rows[0.2] == 0.0 and rows[0.6] == pytest.approx(0.3)
    assert main(["schedule", "--knots", "0.7", "0.3", "--out", str(tmp_path)]) == 1


def test_eval_perfect_scores(tmp_path):
    y = np.array([[1, 0], [0, 1], [1, 1], [0, 0]])
    s = y * 0.8 + 0.1
    for name, m in (("s.csv", s), ("y.csv", y)):
        (tmp_path / name).write_text("LVH,RVH\n" + "\n".join(",".join(map(str, r)) for r in m) + "\n")
    assert main(["eval", "--scores", str(tmp_path / "s.csv"), "--labels", str(tmp_path / "y.csv"),
                 "--out", str(tmp_path)]) == 0
    text = (tmp_path / "metrics.csv").read_text()
    assert text.startswith("# config_hash=")
    macro = [r for r in _csv(tmp_path / "metrics.csv") if r["label"] == "macro"][0]
    assert float(macro["auc"]) == 1.0 and float(macro["f1"]) == 1.0


def test_exit_codes(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.pck"), "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"optim": {"warp": 9}}')
    assert main(["--config", str(bad), "schedule", "--out", str(tmp_path)]) == 1
    assert main(["schedule", "--steps", "0", "--out", str(tmp_path)]) == 1
    assert main(["eval", "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_unknown_key_message_names_key(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"caf": {"gamma": 0.1, "windw": 3}}')
    assert main(["schedule", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "caf.windw" in capsys.readouterr().err


def test_runtime_failure_is_exit_2(tmp_path, monkeypatch):
    import peace.cli as cli

    def boom(*a, **k):
        raise RuntimeError("disk on fire")
    monkeypatch.setattr(cli.caf, "curriculum_trace", boom)
    assert main(["schedule", "--out", str(tmp_path)]) == 2


def _write_raw_manifest(tmp_path, n=1, fs=250.0):
    rng = np.random.default_rng(0)
    metas = []
    for i in range(n):
        t = np.arange(int(fs * 8)) / fs
        x = np.sin(2 * np.pi * 1.2 * t)[None, :] * rng.uniform(0.5, 2, (12, 1)) + 0.3 * np.sin(2 * np.pi * 50 * t)
        path = write_record(EcgRecord(f"r{i}", x, fs), tmp_path / "raw")
        metas.append(RecordMeta(f"r{i}", path.name, ("I105",), "zzu"))
    return write_manifest(metas, tmp_path / "raw" / "manifest.jsonl")


def test_preprocess_one_record(tmp_path):
    manifest = _write_raw_manifest(tmp_path)
    out = tmp_path / "out"
    assert main(["preprocess", str(manifest), "--out", str(out), "--workers", "2"]) == 0
    (meta,) = read_manifest(out / "manifest.jsonl")
    rec = load_record(meta, out)
    assert rec.fs == 500.0 and rec.n_samples == 5000
    x = rec.samples.astype(np.float64)
    np.testing.assert_allclose(x.mean(axis=1), 0, atol=1e-4)
    np.testing.assert_allclose(x.std(axis=1), 1, atol=1e-4)
    info = json.loads((out / "preprocess.json").read_text())
    assert info["stages"] == ["resample", "fix_length", "bandlimit", "standardize"]
    assert json.loads((out / "config.json").read_text())["config_hash"] == info["config_hash"]


def test_preprocess_empty_dry_run_and_failures(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["preprocess", str(empty), "--out", str(tmp_path / "e")]) == 0
    assert read_manifest(tmp_path / "e" / "manifest.jsonl") == []
    manifest = _write_raw_manifest(tmp_path)
    dry = tmp_path / "dry"
    assert main(["preprocess", str(manifest), "--out", str(dry), "--dry-run"]) == 0
    assert "plan:" in capsys.readouterr().out and not dry.exists()
    broken = tmp_path / "broken.jsonl"
    broken.write_text(manifest.read_text() + '{"id":"x","signal":"nope.f32","labels":[],"dataset":"zzu"}\n')
    assert main(["preprocess", str(broken), "--root", str(manifest.parent), "--out", str(tmp_path / "b")]) == 1
    assert len(read_manifest(tmp_path / "b" / "manifest.jsonl")) == 1


def test_map_labels(tmp_path, capsys):
    metas = [RecordMeta("a", "a.f32", ("I105", "L147", "zzz"), "zzu"),
             RecordMeta("b", "b.f32", ("right bundle branch block",), "mimic"),
             RecordMeta("c", "c.f32", ("junk",), "ptbxl")]
    p = write_manifest(metas, tmp_path / "m.jsonl")
    assert main(["map-labels", str(p)]) == 0
    out = capsys.readouterr()
    rows = list(csv.DictReader(io.StringIO(out.out), delimiter="\t"))
    assert rows[0]["labels"] == "IRBBB,TAB_" and rows[0]["unmapped"] == "zzz"
    assert rows[1]["labels"] == "CRBBB" and rows[2]["labels"] == ""
    assert "1 with no mappable label" in out.err


def test_train_eval_round_trip(tmp_path, small_cfg_file):
    out = tmp_path / "run"
    assert main(["--config", str(small_cfg_file), "train", "--out", str(out), "--seed", "4"]) == 0
    for name in ("run_result.csv", "epochs.csv", "trace.csv", "config.json", "checkpoint.pck"):
        assert (out / name).is_file()
    state, meta = load_checkpoint(out / "checkpoint.pck")
    cfg = load_config(small_cfg_file)
    assert meta["seed"] == 4 and meta["labels"] == list(cfg.data.label_codes())
    assert {k.split(".")[0] for k in state} == set(PARAM_GROUPS)
    ev = tmp_path / "ev"
    assert main(["--config", str(small_cfg_file), "eval", "--checkpoint", str(out / "checkpoint.pck"),
                 "--out", str(ev)]) == 0
    train_macro = [r for r in _csv(out / "run_result.csv") if r["label"] == "macro" and r["repeat"] == "0"][0]
    eval_macro = [r for r in _csv(ev / "metrics.csv") if r["label"] == "macro"][0]
    assert float(eval_macro["auc"]) == float(train_macro["auc"])


def test_train_zeroshot_has_no_checkpoint_delta(tmp_path, small_cfg_file):
    out = tmp_path / "zs"
    assert main(["--config", str(small_cfg_file), "train", "--regime", "zeroshot", "--out", str(out)]) == 0
    state, _ = load_checkpoint(out / "checkpoint.pck")
    cfg = load_config(small_cfg_file)
    init = PeaceModel.init(cfg, cfg.data.label_codes(), cfg.optim.seed).state_dict()
    assert all(np.array_equal(init[k], state[k]) for k in init)
    init_ck = out / "checkpoint.pck"
    out2 = tmp_path / "zs2"
    assert main(["--config", str(small_cfg_file), "train", "--regime", "zeroshot", "--init", str(init_ck),
                 "--out", str(out2)]) == 0
    assert (out2 / "checkpoint.pck").read_bytes() == init_ck.read_bytes()


def test_fewshot_needs_count(tmp_path, small_cfg_file):
    assert main(["--config", str(small_cfg_file), "train", "--regime", "fewshot", "--out", str(tmp_path)]) == 1


def test_sweep_command(tmp_path, small_cfg_file):
    out = tmp_path / "sw"
    assert main(["--config", str(small_cfg_file), "sweep", "--n-list", "1", "2", "--out", str(out)]) == 0
    rows = _csv(out / "sweep.csv")
    assert list(rows[0]) == ["N", "mean_auc", "std", "delta_gain"] and len(rows) == 2
    assert (out / "sweep.svg").is_file()


def test_data_root_from_environment(tmp_path, monkeypatch):
    manifest = _write_raw_manifest(tmp_path)
    (tmp_path / "raw" / "manifest.jsonl").rename(tmp_path / "m.jsonl")
    monkeypatch.setenv("PEACE_DATA_ROOT", str(manifest.parent))
    assert main(["preprocess", str(tmp_path / "m.jsonl"), "--out", str(tmp_path / "o")]) == 0

"""Record types, JSONL manifests and the on-disk signal formats.

Binary signal layout (little-endian)::

    b"PECG" | u32 version=1 | u32 n_leads | u32 n_samples | f32 fs | f32[n_leads][n_samples]

CSV layout: an optional ``# fs=<hz>`` comment line, a header row of lead
names in canonical order, then one row per time sample.
"""
from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import FormatError, ParseError, ValidationError

LEADS = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")
DATASET_TAGS = ("mimic", "zzu", "ptbxl", "synthetic")
SPLITS = ("train", "val", "test")

MAGIC = b"PECG"
VERSION = 1
HEADER = struct.Struct("<4sIIIf")


@dataclass(frozen=True, eq=False)
class EcgRecord:
    """One 12-lead signal; samples are float32 millivolts, lead-major."""

    id: str
    samples: np.ndarray
    fs: float
    dataset_tag: str = "synthetic"
    leads: tuple[str, ...] = LEADS

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "fs", float(self.fs))
        if not self.id:
            raise ValidationError("record id must be nonempty")
        if samples.ndim != 2 or samples.shape[0] != len(LEADS):
            raise ValidationError(f"{self.id}: expected 12 x N samples, got {samples.shape}")
        if tuple(self.leads) != LEADS:
            raise ValidationError(f"{self.id}: lead order must be {LEADS}")
        if not self.fs > 0:
            raise ValidationError(f"{self.id}: fs must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValidationError(f"{self.id}: non-finite samples")
        if self.dataset_tag not in DATASET_TAGS:
            raise ValidationError(f"{self.id}: unknown dataset tag {self.dataset_tag!r}")
        samples.setflags(write=False)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def replace(self, samples=None, fs=None) -> "EcgRecord":
        return EcgRecord(self.id, self.samples if samples is None else samples,
                         self.fs if fs is None else fs, self.dataset_tag)


@dataclass(frozen=True)
class RecordMeta:
    id: str
    signal_path: str
    raw_labels: tuple[str, ...]
    dataset_tag: str
    fs: float | None = None

    def to_json(self) -> str:
        obj = {"id": self.id, "signal": self.signal_path, "labels": list(self.raw_labels),
               "dataset": self.dataset_tag}
        if self.fs is not None:
            obj["fs"] = self.fs
        return json.dumps(obj, ensure_ascii=False)


@dataclass
class Dataset:
    """Labelled records plus an optional split assignment.

    ``signals`` caches payloads in memory (synthetic cohorts live only
    there); otherwise payloads are read lazily from ``root``.
    """

    records: list[tuple[RecordMeta, np.ndarray]]
    split_assignment: dict[str, str] | None = None
    signals: dict[str, EcgRecord] = field(default_factory=dict)
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.records)

    def ids(self, split: str | None = None) -> list[str]:
        if split is None:
            return [m.id for m, _ in self.records]
        if self.split_assignment is None:
            raise ValidationError("dataset has no split assignment")
        return [m.id for m, _ in self.records if self.split_assignment.get(m.id) == split]

    def label_matrix(self, ids: Iterable[str] | None = None) -> np.ndarray:
        lookup = {m.id: y for m, y in self.records}
        ids = self.ids() if ids is None else list(ids)
        if not ids:
            return np.zeros((0, 12), dtype=np.uint8)
        return np.stack([lookup[i] for i in ids]).astype(np.uint8)

    def signal(self, record_id: str) -> EcgRecord:
        if record_id in self.signals:
            return self.signals[record_id]
        if self.root is None:
            raise ValidationError(f"no payload for {record_id} and no data root")
        meta = next(m for m, _ in self.records if m.id == record_id)
        return load_record(meta, self.root)

    def subset(self, ids: Iterable[str]) -> "Dataset":
        keep = set(ids)
        recs = [(m, y) for m, y in self.records if m.id in keep]
        split = None
        if self.split_assignment is not None:
            split = {k: v for k, v in self.split_assignment.items() if k in keep}
        sig = {k: v for k, v in self.signals.items() if k in keep}
        return Dataset(recs, split, sig, self.root)

    def check_splits(self) -> None:
        if self.split_assignment is None:
            return
        bad = set(self.split_assignment.values()) - set(SPLITS)
        if bad:
            raise ValidationError(f"unknown split names {sorted(bad)}")


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def parse_manifest(data: bytes | str) -> list[RecordMeta]:
    """Parse JSON-Lines manifest text; blank lines are skipped."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    out: list[RecordMeta] = []
    seen: set[str] = set()
    for lineno, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(obj, dict):
            raise ParseError("expected a JSON object", lineno)
        try:
            rid, sig, labels, tag = obj["id"], obj["signal"], obj["labels"], obj["dataset"]
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", lineno) from None
        if not isinstance(rid, str) or not rid:
            raise ParseError("id must be a nonempty string", lineno)
        if not isinstance(sig, str) or not sig:
            raise ParseError("signal must be a nonempty string", lineno)
        if not isinstance(labels, list) or not all(isinstance(s, str) for s in labels):
            raise ParseError("labels must be a list of strings", lineno)
        if tag not in DATASET_TAGS:
            raise ParseError(f"unknown dataset {tag!r}", lineno)
        fs = obj.get("fs")
        if fs is not None and (not isinstance(fs, (int, float)) or isinstance(fs, bool) or fs <= 0):
            raise ParseError("fs must be a positive number", lineno)
        unknown = set(obj) - {"id", "signal", "labels", "dataset", "fs"}
        if unknown:
            raise ParseError(f"unknown fields {sorted(unknown)}", lineno)
        if rid in seen:
            raise ValidationError(f"line {lineno}: duplicate id {rid!r}")
        seen.add(rid)
        out.append(RecordMeta(rid, sig, tuple(labels), tag, None if fs is None else float(fs)))
    return out


def read_manifest(path: str | Path) -> list[RecordMeta]:
    return parse_manifest(Path(path).read_bytes())


def write_manifest(metas: Iterable[RecordMeta], path: str | Path) -> Path:
    path = Path(path)
    path.write_text("".join(m.to_json() + "\n" for m in metas), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# signal files
# ---------------------------------------------------------------------------

def encode_binary(record: EcgRecord) -> bytes:
    n_leads, n = record.samples.shape
    header = HEADER.pack(MAGIC, VERSION, n_leads, n, record.fs)
    return header + record.samples.astype("<f4", copy=False).tobytes(order="C")


def decode_binary(blob: bytes, record_id: str, dataset_tag: str, fs_override=None) -> EcgRecord:
    if len(blob) < HEADER.size:
        raise FormatError(f"{record_id}: truncated header")
    magic, version, n_leads, n, fs = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{record_id}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{record_id}: unsupported version {version}")
    if n_leads != len(LEADS):
        raise FormatError(f"{record_id}: expected 12 leads, header says {n_leads}")
    expected = HEADER.size + 4 * n_leads * n
    if len(blob) != expected:
        raise FormatError(f"{record_id}: size mismatch, {len(blob)} bytes for {n_leads}x{n} payload")
    samples = np.frombuffer(blob, dtype="<f4", offset=HEADER.size).reshape(n_leads, n)
    if not np.all(np.isfinite(samples)):
        raise FormatError(f"{record_id}: non-finite sample values")
    return EcgRecord(record_id, samples, fs_override or fs, dataset_tag)


def decode_csv(text: str, record_id: str, dataset_tag: str, fs_override=None) -> EcgRecord:
    lines = text.splitlines()
    fs = None
    while lines and lines[0].startswith("#"):
        head = lines.pop(0).lstrip("#").strip()
        for part in head.replace(",", " ").split():
            if part.startswith("fs="):
                fs = float(part[3:])
    rows = list(csv.reader(lines))
    if not rows:
        raise FormatError(f"{record_id}: empty CSV")
    header = [h.strip() for h in rows[0]]
    if tuple(header) != LEADS:
        raise FormatError(f"{record_id}: CSV header must list the 12 leads in canonical order")
    try:
        values = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{record_id}: {exc}") from None
    if values.ndim != 2 or values.shape[1] != len(LEADS):
        raise FormatError(f"{record_id}: every CSV row needs 12 values")
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{record_id}: non-finite sample values")
    fs = fs_override or fs
    if fs is None:
        raise FormatError(f"{record_id}: no sampling rate in CSV header or manifest")
    return EcgRecord(record_id, values.T, fs, dataset_tag)


def load_record(meta: RecordMeta, root: str | Path) -> EcgRecord:
    path = Path(root) / meta.signal_path
    blob = path.read_bytes()
    if blob[:4] == MAGIC:
        return decode_binary(blob, meta.id, meta.dataset_tag, meta.fs)
    if path.suffix.lower() == ".csv":
        return decode_csv(blob.decode("utf-8"), meta.id, meta.dataset_tag, meta.fs)
    raise FormatError(f"{meta.id}: unknown signal format for {path.name}")


def write_record(record: EcgRecord, root: str | Path, fmt: str = "bin") -> Path:
    """Write ``<root>/<id>.f32`` (binary) or ``<root>/<id>.csv``."""
    if not np.all(np.isfinite(record.samples)):
        raise ValidationError(f"{record.id}: refusing to write non-finite samples")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if fmt == "bin":
        path = root / f"{record.id}.f32"
        path.write_bytes(encode_binary(record))
    elif fmt == "csv":
        path = root / f"{record.id}.csv"
        buf = io.StringIO()
        buf.write(f"# fs={record.fs!r}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LEADS)
        for row in record.samples.T:
            writer.writerow([repr(float(v)) for v in row])
        path.write_text(buf.getvalue(), encoding="utf-8")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path

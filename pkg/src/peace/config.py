"""Run configuration: nested sections loaded from a JSON file.

Unknown keys are rejected with their dotted path; every output embeds
``config_hash(cfg)`` so a result can be traced to the exact settings.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .encoders import EncoderConfig
from .errors import ConfigError
from .objective import ObjectiveConfig
from .ontology import CODES
from .signal_pipeline import FilterSpec, PipelineConfig

REGIMES = ("zeroshot", "fewshot", "full")
CAF_MODES = ("gated", "schedule", "constant", "off")
PARAM_GROUPS = ("encoder", "proj_ecg", "proj_rep", "proj_lbl", "fusion", "lqn", "cls_ecg", "cls_rep")
REGIME_LR = {"fewshot": 2.5e-5, "full": 1e-4, "zeroshot": 0.0}


@dataclass(frozen=True)
class DataConfig:
    """Where records come from.  ``manifest`` null means a synthetic cohort."""
    root: str | None = None
    manifest: str | None = None
    n_classes: int = 4
    per_class: int = 100
    noise: float = 0.3
    rate_factor: float = 1.0
    amp_factor: float = 1.0
    fs: float = 500.0
    seconds: float = 10.0
    seed: int = 0
    split_seed: int = 42
    labels: tuple[str, ...] | None = None

    def label_codes(self) -> tuple[str, ...]:
        if self.labels is not None:
            return tuple(self.labels)
        return CODES[: self.n_classes] if self.manifest is None else CODES


@dataclass(frozen=True)
class LqnConfig:
    d_share: int = 32
    heads: int = 4
    emb_dim: int = 64
    emb_seed: int = 0


@dataclass(frozen=True)
class LsbcConfig:
    tau: float = 0.07


@dataclass(frozen=True)
class CafConfig:
    mode: str = "gated"
    gamma: float = 0.05
    window: int = 50
    epsilon: float = 0.01
    knots: tuple[float, float] = (0.3, 0.7)


@dataclass(frozen=True)
class OptimConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_init: float | None = None     # None: regime default
    weight_decay: float = 1.2e-3
    warmup_epochs: int = 5
    warmup_start: float = 1e-5
    min_lr: float = 1e-6
    grad_clip_norm: float = 5.0
    batch_size: int = 32
    epochs: int = 20
    max_steps: int | None = None
    seed: int = 0

    def lr_for(self, regime: str) -> float:
        return REGIME_LR[regime] if self.lr_init is None else self.lr_init


@dataclass(frozen=True)
class RegimeConfig:
    regime: str = "full"
    n_per_class: int | None = None
    frozen_groups: tuple[str, ...] = ("fusion",)


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs"
    svg: bool = True


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lqn: LqnConfig = field(default_factory=LqnConfig)
    lsbc: LsbcConfig = field(default_factory=LsbcConfig)
    caf: CafConfig = field(default_factory=CafConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    regime: RegimeConfig = field(default_factory=RegimeConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> "RunConfig":
        self.encoder.validate()
        r = self.regime
        if r.regime not in REGIMES:
            raise ConfigError(f"regime.regime: expected one of {REGIMES}, got {r.regime!r}")
        if r.regime == "fewshot" and (r.n_per_class is None or r.n_per_class < 1):
            raise ConfigError("regime.n_per_class: fewshot needs a positive count")
        bad = set(r.frozen_groups) - set(PARAM_GROUPS)
        if bad:
            raise ConfigError(f"regime.frozen_groups: unknown groups {sorted(bad)}")
        if self.caf.mode not in CAF_MODES:
            raise ConfigError(f"caf.mode: expected one of {CAF_MODES}, got {self.caf.mode!r}")
        if self.lqn.d_share >= self.encoder.dim or self.lqn.d_share >= self.lqn.emb_dim:
            raise ConfigError("lqn.d_share: must be smaller than encoder and embedding dims")
        if self.lqn.d_share % self.lqn.heads:
            raise ConfigError("lqn.heads: must divide lqn.d_share")
        if not self.lsbc.tau > 0:
            raise ConfigError("lsbc.tau: must be positive")
        o = self.optim
        for key in ("batch_size", "epochs"):
            if getattr(o, key) < 1:
                raise ConfigError(f"optim.{key}: must be >= 1")
        if o.max_steps is not None and o.max_steps < 1:
            raise ConfigError("optim.max_steps: must be >= 1")
        for key in ("beta1", "beta2"):
            if not 0 <= getattr(o, key) < 1:
                raise ConfigError(f"optim.{key}: must lie in [0, 1)")
        for key in ("eps", "grad_clip_norm", "min_lr", "warmup_start"):
            if not getattr(o, key) > 0:
                raise ConfigError(f"optim.{key}: must be positive")
        if o.weight_decay < 0 or o.warmup_epochs < 0:
            raise ConfigError("optim: weight_decay and warmup_epochs must be >= 0")
        if o.lr_init is not None and not o.lr_init > 0:
            raise ConfigError("optim.lr_init: must be positive")
        n = round(self.data.fs * self.data.seconds)
        if self.data.manifest is None and n != self.encoder.input_len:
            raise ConfigError(f"encoder.input_len: synthetic records have {n} samples, "
                              f"encoder expects {self.encoder.input_len}")
        for code in self.data.label_codes():
            if code not in CODES:
                raise ConfigError(f"data.labels: unknown label {code!r}")
        return self


def _convert(tp, value, path: str):
    """Coerce JSON values into the dataclass field type (tuples, nested sections)."""
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if isinstance(tp, str):
        tp_s = tp
    else:
        tp_s = getattr(tp, "__name__", str(tp))
    if value is None:
        if "None" not in tp_s:
            raise ConfigError(f"{path}: null not allowed")
        return None
    if "tuple" in tp_s:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        return tuple(value)
    if tp_s.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if tp_s.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp_s.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{path}: expected a finite number")
        return float(value)
    if tp_s.startswith("str") and not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string")
    return value


_NESTED = {"filters": FilterSpec}


def _build(cls, obj, path: str):
    if isinstance(obj, cls):
        return obj
    if not isinstance(obj, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - set(fields))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown config key {where}{unknown[0]}")
    kwargs = {}
    for name, value in obj.items():
        sub = f"{path}.{name}" if path else name
        tp = _NESTED.get(name) if cls is PipelineConfig else None
        if tp is None:
            tp = _SECTIONS.get(name) if cls is RunConfig else fields[name].type
        kwargs[name] = _convert(tp, value, sub)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


_SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(RunConfig)}


def from_dict(obj: dict) -> RunConfig:
    return _build(RunConfig, obj, "").validate()


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return from_dict(obj)


def to_dict(cfg) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def override(cfg: RunConfig, **sections) -> RunConfig:
    """Return a copy with selected fields replaced: ``override(cfg, optim={"seed": 3})``."""
    d = to_dict(cfg)
    for sec, values in sections.items():
        if sec not in d:
            raise ConfigError(f"unknown config key {sec}")
        d[sec].update(values)
    return from_dict(d)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]

"""Preprocessing chain: resample, fix length, band-limit, calibrate, standardise.

Array-level helpers (``*_array``) work on float64 ``[leads, samples]``
arrays; record-level wrappers return new :class:`EcgRecord` objects.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np
from scipy import signal as sps

from .ecg_data import EcgRecord
from .errors import ValidationError

log = logging.getLogger(__name__)

STAGES = ("resample", "fix_length", "bandlimit", "calibrate", "standardize")


@dataclass(frozen=True)
class FilterSpec:
    highpass_hz: float = 0.5
    lowpass_hz: float = 100.0
    notch_hz: float = 50.0
    notch_q: float = 30.0
    order: int = 4

    def validate(self, fs: float) -> None:
        nyq = fs / 2.0
        if not 0 < self.highpass_hz < self.lowpass_hz < nyq:
            raise ValidationError(
                f"need 0 < highpass ({self.highpass_hz}) < lowpass ({self.lowpass_hz}) < fs/2 ({nyq})")
        if not 0 < self.notch_hz < nyq:
            raise ValidationError(f"notch {self.notch_hz} Hz outside (0, {nyq})")
        if self.order < 1 or self.notch_q <= 0:
            raise ValidationError("filter order and notch Q must be positive")


@dataclass(frozen=True)
class AmplitudeStats:
    per_lead_p2p_median: np.ndarray

    @property
    def degenerate(self) -> np.ndarray:
        return ~(self.per_lead_p2p_median > 0)

    def to_dict(self) -> dict:
        return {"per_lead_p2p_median": [float(v) for v in self.per_lead_p2p_median]}

    @classmethod
    def from_dict(cls, d: dict) -> "AmplitudeStats":
        return cls(np.asarray(d["per_lead_p2p_median"], dtype=np.float64))


@dataclass(frozen=True)
class ScalerStats:
    per_lead_mean: np.ndarray
    per_lead_std: np.ndarray

    def to_dict(self) -> dict:
        return {"per_lead_mean": [float(v) for v in self.per_lead_mean],
                "per_lead_std": [float(v) for v in self.per_lead_std]}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerStats":
        return cls(np.asarray(d["per_lead_mean"], dtype=np.float64),
                   np.asarray(d["per_lead_std"], dtype=np.float64))


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _ratio(fs: float, target_hz: float, max_den: int = 1000) -> Fraction:
    frac = Fraction(target_hz / fs).limit_denominator(max_den)
    if abs(float(frac) - target_hz / fs) > 1e-9 * target_hz / fs:
        raise ValidationError(
            f"cannot resample {fs} Hz -> {target_hz} Hz with a bounded polyphase filter")
    return frac


def resample_array(x: np.ndarray, fs: float, target_hz: float) -> np.ndarray:
    """Polyphase windowed-sinc resampling along the last axis.

    The signal is extended by odd reflection before filtering so the
    filter transient does not pull the ends toward zero.
    """
    if target_hz <= 0 or fs <= 0:
        raise ValidationError("sampling rates must be positive")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    out_len = int(round(n * target_hz / fs))
    if target_hz == fs:
        return x.copy()
    frac = _ratio(fs, target_hz)
    up, down = frac.numerator, frac.denominator
    # pad must map to an integer number of output samples
    pad = min(n - 1, 20 * max(up, down))
    pad -= pad % down
    if pad > 0:
        left = 2 * x[..., :1] - x[..., pad:0:-1]
        right = 2 * x[..., -1:] - x[..., -2 : -pad - 2 : -1]
        xp = np.concatenate([left, x, right], axis=-1)
    else:
        xp = x
    y = sps.resample_poly(xp, up, down, axis=-1, window=("kaiser", 5.0))
    start = pad * up // down
    y = y[..., start : start + out_len]
    if y.shape[-1] < out_len:
        y = np.concatenate([y, np.zeros(y.shape[:-1] + (out_len - y.shape[-1],))], axis=-1)
    return y


def resample(record: EcgRecord, target_hz: float) -> EcgRecord:
    if target_hz == record.fs:
        return record
    return record.replace(resample_array(record.samples, record.fs, target_hz), target_hz)


# ---------------------------------------------------------------------------
# length
# ---------------------------------------------------------------------------

def fix_length_array(x: np.ndarray, n: int) -> np.ndarray:
    """Keep the leading ``n`` samples, or zero-pad at the end."""
    cur = x.shape[-1]
    if cur >= n:
        return x[..., :n]
    pad = np.zeros(x.shape[:-1] + (n - cur,), dtype=x.dtype)
    return np.concatenate([x, pad], axis=-1)


def fix_length(record: EcgRecord, seconds: float = 10.0) -> EcgRecord:
    n = int(round(seconds * record.fs))
    if n == record.n_samples:
        return record
    return record.replace(fix_length_array(record.samples, n))


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------

def design_filters(spec: FilterSpec, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """Cascade SOS: Butterworth high-pass, low-pass, and the IIR notch."""
    spec.validate(fs)
    hp = sps.butter(spec.order, spec.highpass_hz, btype="highpass", fs=fs, output="sos")
    lp = sps.butter(spec.order, spec.lowpass_hz, btype="lowpass", fs=fs, output="sos")
    b, a = sps.iirnotch(spec.notch_hz, spec.notch_q, fs=fs)
    sos = np.vstack([hp, lp, sps.tf2sos(b, a)])
    poles = np.concatenate([np.roots(s[3:]) for s in sos])
    if np.any(np.abs(poles) >= 1.0):
        raise ValidationError(f"filter design unstable at fs={fs} for {spec}")
    return sos, poles


def _extend_right(x: np.ndarray, padlen: int, omega: float) -> np.ndarray:
    """Continue the tail of ``x`` by ``padlen`` samples.

    The mains-frequency component of the tail is fitted by least squares (with a
    nuisance offset and slope) and continued analytically; what remains is
    point-reflected. Both parts are linear in ``x``, so the filter stays linear,
    and a pure mains tone is continued exactly, which keeps the notch from
    ringing at the record edges.
    """
    m = padlen + 1
    tau = np.arange(-m + 1, 1, dtype=np.float64)
    basis = np.stack([np.ones(m), tau, np.cos(omega * tau), np.sin(omega * tau)], axis=1)
    seg = x[..., -m:]
    coef = seg @ np.linalg.pinv(basis).T
    mains = coef[..., 2:3] * basis[:, 2] + coef[..., 3:4] * basis[:, 3]
    rest = seg - mains
    k = np.arange(1, padlen + 1)
    ahead = coef[..., 2:3] * np.cos(omega * k) + coef[..., 3:4] * np.sin(omega * k)
    return ahead + 2.0 * rest[..., -1:] - rest[..., -1 - k]


def bandlimit_array(x: np.ndarray, fs: float, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Zero-phase (forward-backward) application of the cascade."""
    sos, _ = design_filters(spec, fs)
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    padlen = min(n - 1, 3 * int(round(fs)))
    if padlen < 4:
        return sps.sosfiltfilt(sos, x, axis=-1, padtype="odd", padlen=padlen)
    omega = 2.0 * np.pi * spec.notch_hz / fs
    left = _extend_right(x[..., ::-1], padlen, omega)[..., ::-1]
    right = _extend_right(x, padlen, omega)
    y = sps.sosfiltfilt(sos, np.concatenate([left, x, right], axis=-1), axis=-1, padtype=None)
    return y[..., padlen:padlen + n]


def bandlimit(record: EcgRecord, spec: FilterSpec = FilterSpec()) -> EcgRecord:
    return record.replace(bandlimit_array(record.samples, record.fs, spec))


# ---------------------------------------------------------------------------
# amplitude calibration
# ---------------------------------------------------------------------------

def compute_p2p_stats(records: Iterable[EcgRecord]) -> AmplitudeStats:
    p2p = [np.ptp(r.samples.astype(np.float64), axis=1) for r in records]
    if not p2p:
        raise ValidationError("peak-to-peak statistics need at least one record")
    med = np.median(np.stack(p2p), axis=0)
    stats = AmplitudeStats(med)
    if stats.degenerate.any():
        log.warning("degenerate (constant) leads in p2p stats: %s", np.flatnonzero(stats.degenerate).tolist())
    return stats


def calibrate_amplitude_array(x: np.ndarray, ref: AmplitudeStats, own: AmplitudeStats) -> np.ndarray:
    if own.degenerate.any():
        raise ValidationError("cannot calibrate against degenerate cohort statistics")
    gain = ref.per_lead_p2p_median / own.per_lead_p2p_median
    return np.asarray(x, dtype=np.float64) * gain[:, None]


def calibrate_amplitude(record: EcgRecord, ref: AmplitudeStats, own: AmplitudeStats) -> EcgRecord:
    return record.replace(calibrate_amplitude_array(record.samples, ref, own))


# ---------------------------------------------------------------------------
# standardisation
# ---------------------------------------------------------------------------

def fit_scaler(records: Iterable[EcgRecord]) -> ScalerStats:
    """Per-lead mean and population std, merged record by record (Chan et al.)."""
    count = 0
    mean = None
    m2 = None
    for r in records:
        x = r.samples.astype(np.float64)
        n_b = x.shape[1]
        if n_b == 0:
            continue
        mu_b = x.mean(axis=1)
        m2_b = ((x - mu_b[:, None]) ** 2).sum(axis=1)
        if mean is None:
            count, mean, m2 = n_b, mu_b, m2_b
            continue
        delta = mu_b - mean
        tot = count + n_b
        mean = mean + delta * n_b / tot
        m2 = m2 + m2_b + delta**2 * count * n_b / tot
        count = tot
    if mean is None:
        raise ValidationError("scaler needs at least one nonempty record")
    std = np.sqrt(m2 / count)
    std = np.where(std > 0, std, 1.0)
    return ScalerStats(mean, std)


def standardize_array(x: np.ndarray, stats: ScalerStats) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - stats.per_lead_mean[:, None]) / stats.per_lead_std[:, None]


def standardize(record: EcgRecord, stats: ScalerStats) -> EcgRecord:
    return record.replace(standardize_array(record.samples, stats))


# ---------------------------------------------------------------------------
# full chain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    target_hz: float = 500.0
    seconds: float = 10.0
    filters: FilterSpec = FilterSpec()
    bandlimit: bool = True
    calibrate: bool = False
    standardize: bool = True


def shape_records(records: Iterable[EcgRecord], cfg: PipelineConfig) -> list[EcgRecord]:
    """Stages that need no cohort statistics: resample, fix length, filter."""
    out = []
    for r in records:
        r = fix_length(resample(r, cfg.target_hz), cfg.seconds)
        if cfg.bandlimit:
            r = bandlimit(r, cfg.filters)
        out.append(r)
    return out


def run_pipeline(records: Iterable[EcgRecord], cfg: PipelineConfig,
                 ref_stats: AmplitudeStats | None = None,
                 scaler: ScalerStats | None = None) -> tuple[list[EcgRecord], dict]:
    """Apply the whole chain in order; returns records and fitted statistics.

    Calibration is applied only when ``cfg.calibrate`` is set, using
    ``ref_stats`` from the reference cohort and statistics recomputed on
    the given records.  A missing ``scaler`` is fitted on the records
    themselves, so pass the training-split scaler for val/test data.
    """
    shaped = shape_records(records, cfg)
    fitted: dict = {"stages": [s for s in STAGES if _enabled(s, cfg)]}
    if cfg.calibrate and shaped:
        if ref_stats is None:
            raise ValidationError("calibration requested without reference statistics")
        own = compute_p2p_stats(shaped)
        shaped = [calibrate_amplitude(r, ref_stats, own) for r in shaped]
        fitted["own_p2p"] = own
    if cfg.standardize and shaped:
        if scaler is None:
            scaler = fit_scaler(shaped)
        shaped = [standardize(r, scaler) for r in shaped]
        fitted["scaler"] = scaler
    log.info("pipeline stages: %s", " -> ".join(fitted["stages"]))
    return shaped, fitted


def _enabled(stage: str, cfg: PipelineConfig) -> bool:
    return {"bandlimit": cfg.bandlimit, "calibrate": cfg.calibrate,
            "standardize": cfg.standardize}.get(stage, True)

"""Residual 1-D conv ECG encoder, token pooling and projection heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ValidationError

_ACTIVATIONS = {"relu": ad.relu, "gelu": ad.gelu, "identity": lambda x: x}


@dataclass(frozen=True)
class EncoderConfig:
    in_leads: int = 12
    input_len: int = 5000
    channels: tuple[int, ...] = (32, 64, 64, 64)
    kernels: tuple[int, ...] = (7, 5, 5, 5)
    strides: tuple[int, ...] = (4, 4, 4, 2)
    activation: str = "relu"

    @property
    def dim(self) -> int:
        return self.channels[-1]

    @property
    def n_tokens(self) -> int:
        n = self.input_len
        for s in self.strides:
            n //= s
        return n

    def validate(self) -> None:
        if not (len(self.channels) == len(self.kernels) == len(self.strides)):
            raise ValidationError("encoder channels, kernels and strides must align")
        if any(k < s for k, s in zip(self.kernels, self.strides)):
            raise ValidationError("each kernel must be at least as wide as its stride")
        if self.activation not in _ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.n_tokens < 8:
            raise ValidationError(f"stride plan leaves {self.n_tokens} tokens; need >= 8")


def _he(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class EcgEncoder:
    """Residual blocks: conv(k, s) -> act -> conv(k, 1) plus a strided shortcut.

    Strided convolutions are padded with ``k - s`` samples in total, so each
    block maps length ``L`` to ``L // s`` exactly.
    """

    def __init__(self, cfg: EncoderConfig, params: dict[str, ad.Tensor]):
        cfg.validate()
        self.cfg = cfg
        self.params = params
        self.act = _ACTIVATIONS[cfg.activation]

    @classmethod
    def init(cls, cfg: EncoderConfig, rng: np.random.Generator) -> "EcgEncoder":
        cfg.validate()
        params = {}
        c_in = cfg.in_leads
        for i, (c, k, s) in enumerate(zip(cfg.channels, cfg.kernels, cfg.strides)):
            params[f"b{i}.conv1.w"] = ad.parameter(_he(rng, (c, c_in, k), c_in * k))
            params[f"b{i}.conv1.b"] = ad.parameter(np.zeros(c))
            params[f"b{i}.conv2.w"] = ad.parameter(_he(rng, (c, c, k), c * k) * 0.5)
            params[f"b{i}.conv2.b"] = ad.parameter(np.zeros(c))
            params[f"b{i}.skip.w"] = ad.parameter(_he(rng, (c, c_in, s), c_in * s) * 0.5)
            c_in = c
        return cls(cfg, params)

    def __call__(self, x) -> ad.Tensor:
        return encode_ecg(x, self)


def encode_ecg(batch, enc: EcgEncoder) -> ad.Tensor:
    """[B, 12, L] -> tokens [B, T, d]."""
    cfg = enc.cfg
    x = ad.as_tensor(batch)
    if x.ndim != 3 or x.shape[1] != cfg.in_leads or x.shape[2] != cfg.input_len:
        raise ValidationError(f"encoder expects [B, {cfg.in_leads}, {cfg.input_len}], got {x.shape}")
    p = enc.params
    for i, (k, s) in enumerate(zip(cfg.kernels, cfg.strides)):
        pad = k - s
        h = ad.conv1d(x, p[f"b{i}.conv1.w"], p[f"b{i}.conv1.b"], stride=s, padding=(pad // 2, pad - pad // 2))
        h = enc.act(h)
        h = ad.conv1d(h, p[f"b{i}.conv2.w"], p[f"b{i}.conv2.b"], stride=1, padding=((k - 1) // 2, k // 2))
        skip = ad.conv1d(x, p[f"b{i}.skip.w"], None, stride=s, padding=0)
        x = enc.act(h + skip)
    return ad.transpose(x, (0, 2, 1))


def global_avg_pool(tokens) -> ad.Tensor:
    tokens = ad.as_tensor(tokens)
    if tokens.ndim != 3 or tokens.shape[1] < 1:
        raise ValidationError(f"expected [B, T, d] tokens with T >= 1, got {tokens.shape}")
    return ad.mean(tokens, axis=1)


class ProjectionHead:
    """Two-layer perceptron d -> hidden -> d_share, applied over the last axis."""

    def __init__(self, w1, b1, w2, b2, activation: str = "gelu"):
        self.w1, self.b1, self.w2, self.b2 = (t if isinstance(t, ad.Tensor) else ad.parameter(t)
                                              for t in (w1, b1, w2, b2))
        if activation not in _ACTIVATIONS:
            raise ValidationError(f"unknown activation {activation!r}")
        self.activation = activation
        if self.w1.shape[1] != self.w2.shape[0]:
            raise ValidationError("projection head layer shapes do not chain")

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    @classmethod
    def init(cls, d: int, d_share: int, rng: np.random.Generator, hidden: int | None = None,
             activation: str = "gelu") -> "ProjectionHead":
        if not d_share < d:
            raise ValidationError("projection must shrink: d_share < d")
        hidden = hidden or d
        return cls(rng.normal(0, np.sqrt(2.0 / d), (d, hidden)), np.zeros(hidden),
                   rng.normal(0, np.sqrt(1.0 / hidden), (hidden, d_share)), np.zeros(d_share), activation)

    def params(self) -> dict[str, ad.Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def __call__(self, x) -> ad.Tensor:
        return project(x, self)


def project(x, head: ProjectionHead) -> ad.Tensor:
    x = ad.as_tensor(x)
    if x.shape[-1] != head.in_dim:
        raise ValidationError(f"projection expects trailing dim {head.in_dim}, got {x.shape}")
    h = _ACTIVATIONS[head.activation](x @ head.w1 + head.b1)
    return h @ head.w2 + head.b2

"""Tri-axial label descriptors, prompt rendering, hash text embedding, fusion."""
from __future__ import annotations

import csv
import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Callable, Protocol

import numpy as np

from . import autodiff as ad
from .errors import ValidationError
from .ontology import LABELS, N_LABELS, Label, label

PLACEHOLDER = "<LABEL>"


@dataclass(frozen=True)
class TriAxialDescriptor:
    label: Label
    rhythm: str
    morphology: str
    stt: str

    def __post_init__(self):
        for axis in ("rhythm", "morphology", "stt"):
            if not getattr(self, axis).strip():
                raise ValidationError(f"{self.label.code}: empty {axis} text")

    def axes(self) -> tuple[str, str, str]:
        return self.rhythm, self.morphology, self.stt

    def as_text(self) -> str:
        return f"rhythm: {self.rhythm}; morphology: {self.morphology}; ST-T repolarization: {self.stt}"


@lru_cache(maxsize=None)
def _bundled() -> dict[str, TriAxialDescriptor]:
    text = resources.files("peace").joinpath("data/descriptors.tsv").read_text(encoding="utf-8")
    rows = csv.DictReader(text.splitlines(), delimiter="\t")
    return {r["label"]: TriAxialDescriptor(label(r["label"]), r["rhythm"], r["morphology"], r["stt"])
            for r in rows}


def descriptor_for(lab: Label | str) -> TriAxialDescriptor:
    return _bundled()[label(lab).code]


@lru_cache(maxsize=None)
def prompt_template() -> str:
    return resources.files("peace").joinpath("data/prompt_template.txt").read_text(encoding="utf-8").strip()


def render_prompt(lab: Label | str) -> str:
    return prompt_template().replace(PLACEHOLDER, label(lab).full_name)


_AXIS_RE = re.compile(
    r"rhythm:\s*(?P<rhythm>.+?);\s*morphology:\s*(?P<morph>.+?);\s*ST-T repolarization:\s*(?P<stt>.+)\s*$",
    re.IGNORECASE | re.DOTALL)


def parse_descriptor_text(lab: Label | str, text: str) -> TriAxialDescriptor:
    """Split ``rhythm: ...; morphology: ...; ST-T repolarization: ...`` text."""
    m = _AXIS_RE.search(text.strip())
    if m is None:
        raise ValidationError(f"descriptor text for {label(lab).code} lacks the three axis fields")
    return TriAxialDescriptor(label(lab), m["rhythm"].strip(), m["morph"].strip(), m["stt"].strip())


class DescriptorProvider(Protocol):
    def __call__(self, prompt: str) -> str: ...


class BundledProvider:
    """Answers prompts from the shipped descriptor table; no network I/O."""

    def __call__(self, prompt: str) -> str:
        for lab in LABELS:
            if render_prompt(lab) == prompt:
                return descriptor_for(lab).as_text()
        raise ValidationError("prompt does not match any bundled label")


def generate_descriptor(lab: Label | str, provider: DescriptorProvider | Callable[[str], str] | None = None
                        ) -> TriAxialDescriptor:
    provider = provider or BundledProvider()
    return parse_descriptor_text(lab, provider(render_prompt(lab)))


# ---------------------------------------------------------------------------
# text embedding
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:[/'][a-z0-9]+)*|[^\sa-z0-9]")


class HashEmbedder:
    """Signed feature hashing of word unigrams and bigrams, L2-normalised.

    Uses blake2b so vectors are stable across processes (``hash()`` is
    salted per interpreter).
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ValidationError("embedding dim must be positive")
        self.dim = dim
        self.seed = seed
        self._salt = seed.to_bytes(8, "little", signed=False)

    def _slot(self, feature: str) -> tuple[int, float]:
        h = hashlib.blake2b(feature.encode("utf-8"), digest_size=8, key=self._salt).digest()
        v = int.from_bytes(h, "little")
        return v % self.dim, (1.0 if (v >> 63) & 1 else -1.0)

    def features(self, text: str) -> list[str]:
        toks = _TOKEN_RE.findall(text.lower())
        return toks + [f"{a} {b}" for a, b in zip(toks, toks[1:])]

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for feat in self.features(text):
            idx, sign = self._slot(feat)
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def embed_many(self, texts) -> np.ndarray:
        return np.stack([self.embed(t) for t in texts]) if texts else np.zeros((0, self.dim))


def embed_triaxial(desc: TriAxialDescriptor, emb: HashEmbedder) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return emb.embed(desc.rhythm), emb.embed(desc.morphology), emb.embed(desc.stt)


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------

class FusionHead:
    """X_rep = W_fus [x_rhythm || x_morph || x_stt] (+ bias); W_fus is d x 3d."""

    def __init__(self, weight, bias=None):
        self.weight = weight if isinstance(weight, ad.Tensor) else ad.parameter(weight, "fusion.weight")
        d, d3 = self.weight.shape
        if d3 != 3 * d:
            raise ValidationError(f"fusion weight must be d x 3d, got {self.weight.shape}")
        if bias is None:
            bias = np.zeros(d)
        self.bias = bias if isinstance(bias, ad.Tensor) else ad.parameter(bias, "fusion.bias")

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "FusionHead":
        # average the three axes at init, plus a small random perturbation
        eye = np.eye(dim) / 3.0
        w = np.hstack([eye, eye, eye]) + rng.normal(0.0, 0.02, size=(dim, 3 * dim))
        return cls(w)

    def params(self) -> dict[str, ad.Tensor]:
        return {"weight": self.weight, "bias": self.bias}


def fuse_triaxial(x_rhythm, x_morph, x_isch, head: FusionHead) -> ad.Tensor:
    """Row-wise fusion; inputs are [d] vectors or [n, d] stacks."""
    parts = [ad.as_tensor(x) for x in (x_rhythm, x_morph, x_isch)]
    d = head.dim
    if any(p.shape[-1] != d for p in parts) or len({p.shape for p in parts}) != 1:
        raise ValidationError(f"fusion inputs must share trailing dim {d}")
    squeeze = parts[0].ndim == 1
    if squeeze:
        parts = [p.reshape(1, d) for p in parts]
    cat = ad.concat(parts, axis=-1)
    out = cat @ ad.transpose(head.weight) + head.bias
    return out.reshape(d) if squeeze else out


@lru_cache(maxsize=8)
def _axis_table(dim: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    emb = HashEmbedder(dim, seed)
    trip = [embed_triaxial(descriptor_for(lab), emb) for lab in LABELS]
    return tuple(np.stack([t[k] for t in trip]) for k in range(3))


def descriptor_axis_matrices(emb: HashEmbedder) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Three [12, d] matrices of axis embeddings in canonical label order."""
    return _axis_table(emb.dim, emb.seed)


def assembly_weights(label_matrix: np.ndarray) -> np.ndarray:
    """[B, 12] row weights: mean over positive labels, NORM when none."""
    y = np.asarray(label_matrix, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != N_LABELS:
        raise ValidationError(f"label matrix must be B x {N_LABELS}")
    y = y.copy()
    empty = y.sum(axis=1) == 0
    y[empty, label("NORM").index] = 1.0
    return y / y.sum(axis=1, keepdims=True)


def sample_descriptors(label_matrix: np.ndarray, head: FusionHead, emb: HashEmbedder) -> ad.Tensor:
    """Per-sample X_rep [B, d]: mean of fused descriptors of the positive labels."""
    fused = fuse_triaxial(*descriptor_axis_matrices(emb), head)
    return ad.as_tensor(assembly_weights(label_matrix)) @ fused

"""The assembled two-branch model and its named parameter groups."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import PARAM_GROUPS, RunConfig
from .descriptors import FusionHead, HashEmbedder, sample_descriptors
from .encoders import EcgEncoder, ProjectionHead, global_avg_pool, project
from .errors import ValidationError
from .lqn import LqnParams, label_embeddings, label_query_attend
from .ontology import label


@dataclass
class ModelOutput:
    logits_ecg: ad.Tensor         # [B, C]
    logits_rep: ad.Tensor | None  # [B, C], training only
    z_ecg: ad.Tensor | None       # [B, C, d_share]
    z_rep: ad.Tensor | None


class PeaceModel:
    """ECG branch (encoder -> pooled -> classifier) plus the descriptor branch
    (fused tri-axial descriptors -> classifier), both queried by the LQN.

    ``labels`` is the trained label subset; label matrices passed in are the
    full 12-column canonical ones.
    """

    def __init__(self, cfg: RunConfig, groups: dict[str, dict[str, ad.Tensor]], labels):
        self.cfg = cfg
        self.labels = tuple(label(x) for x in labels)
        self.cols = np.array([lab.index for lab in self.labels], dtype=np.intp)
        missing = set(PARAM_GROUPS) - set(groups)
        if missing:
            raise ValidationError(f"missing parameter groups {sorted(missing)}")
        self.groups = groups
        self.emb = HashEmbedder(cfg.lqn.emb_dim, cfg.lqn.emb_seed)
        self.encoder = EcgEncoder(cfg.encoder, groups["encoder"])
        self.proj_ecg = ProjectionHead(**groups["proj_ecg"])
        self.proj_rep = ProjectionHead(**groups["proj_rep"])
        self.proj_lbl = ProjectionHead(**groups["proj_lbl"])
        self.fusion = FusionHead(groups["fusion"]["weight"], groups["fusion"]["bias"])
        self.lqn = LqnParams(groups["lqn"], cfg.lqn.heads)

    @classmethod
    def init(cls, cfg: RunConfig, labels, seed: int = 0) -> "PeaceModel":
        rng = np.random.default_rng(seed)
        d, dt, ds = cfg.encoder.dim, cfg.lqn.emb_dim, cfg.lqn.d_share
        c = len(labels)
        groups = {
            "encoder": EcgEncoder.init(cfg.encoder, rng).params,
            "proj_ecg": ProjectionHead.init(d, ds, rng).params(),
            "proj_rep": ProjectionHead.init(dt, ds, rng).params(),
            "proj_lbl": ProjectionHead.init(dt, ds, rng).params(),
            "fusion": FusionHead.init(dt, rng).params(),
            "lqn": LqnParams.init(ds, cfg.lqn.heads, rng).params(),
            "cls_ecg": {"w": ad.parameter(rng.normal(0, np.sqrt(1.0 / d), (d, c))),
                        "b": ad.parameter(np.zeros(c))},
            "cls_rep": {"w": ad.parameter(rng.normal(0, np.sqrt(1.0 / dt), (dt, c))),
                        "b": ad.parameter(np.zeros(c))},
        }
        return cls(cfg, groups, labels)

    def named_parameters(self) -> dict[str, ad.Tensor]:
        return {f"{g}.{n}": t for g in PARAM_GROUPS for n, t in self.groups[g].items()}

    def trainable(self, frozen) -> dict[str, ad.Tensor]:
        frozen = set(frozen)
        return {k: t for k, t in self.named_parameters().items() if k.split(".", 1)[0] not in frozen}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(state) != set(params):
            diff = sorted(set(state) ^ set(params))
            raise ValidationError(f"state dict keys differ from model: {diff[:5]}")
        for k, t in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValidationError(f"{k}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for k, t in sorted(self.named_parameters().items()):
            h.update(k.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    # -- forward ---------------------------------------------------------

    def ecg_logits(self, x) -> ad.Tensor:
        pooled = global_avg_pool(self.encoder(x))
        g = self.groups["cls_ecg"]
        return pooled @ g["w"] + g["b"]

    def forward(self, x, label_matrix=None) -> ModelOutput:
        """Full training forward; ``label_matrix`` [B, 12] enables the descriptor branch."""
        tokens = self.encoder(x)
        g = self.groups["cls_ecg"]
        logits_ecg = global_avg_pool(tokens) @ g["w"] + g["b"]
        if label_matrix is None:
            return ModelOutput(logits_ecg, None, None, None)
        y = np.asarray(label_matrix)
        if y.shape != (tokens.shape[0], 12):
            raise ValidationError(f"label matrix must be [{tokens.shape[0]}, 12], got {y.shape}")
        x_rep = sample_descriptors(y, self.fusion, self.emb)                      # [B, dt]
        g = self.groups["cls_rep"]
        logits_rep = x_rep @ g["w"] + g["b"]
        queries = label_embeddings(self.labels, self.emb, self.proj_lbl)         # [C, ds]
        kv_ecg = project(tokens, self.proj_ecg)                                  # [B, T, ds]
        kv_rep = project(x_rep, self.proj_rep)
        kv_rep = kv_rep.reshape(kv_rep.shape[0], 1, kv_rep.shape[1])             # single token
        z_ecg = label_query_attend(queries, kv_ecg, self.lqn)
        z_rep = label_query_attend(queries, kv_rep, self.lqn)
        return ModelOutput(logits_ecg, logits_rep, z_ecg, z_rep)

    def predict_scores(self, x, batch_size: int = 64) -> np.ndarray:
        """ECG-branch logits; kept on the logit scale so saturated
        probabilities do not create artificial ties."""
        x = np.asarray(x, dtype=np.float64)
        out = []
        with ad.no_grad():
            for s in range(0, x.shape[0], batch_size):
                out.append(self.ecg_logits(x[s: s + batch_size]).data)
        if not out:
            return np.zeros((0, len(self.labels)))
        return np.concatenate(out)

"""Label-query cross-attention: each label embedding attends over a sample's tokens."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .descriptors import HashEmbedder
from .encoders import ProjectionHead, project
from .errors import ValidationError
from .ontology import Label, label


class LqnParams:
    """Q/K/V/output projections (with biases) and the LayerNorm affine."""

    NAMES = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln_g", "ln_b")

    def __init__(self, tensors: dict[str, ad.Tensor], heads: int):
        missing = set(self.NAMES) - set(tensors)
        if missing:
            raise ValidationError(f"LQN params missing {sorted(missing)}")
        self.t = tensors
        self.heads = heads
        self.dim = tensors["wq"].shape[0]
        if heads < 1 or self.dim % heads:
            raise ValidationError(f"{heads} heads do not divide d_share={self.dim}")

    @classmethod
    def init(cls, d_share: int, heads: int, rng: np.random.Generator) -> "LqnParams":
        s = 1.0 / np.sqrt(d_share)
        t = {}
        for n in ("q", "k", "v", "o"):
            t[f"w{n}"] = ad.parameter(rng.normal(0, s, (d_share, d_share)))
            t[f"b{n}"] = ad.parameter(np.zeros(d_share))
        t["ln_g"] = ad.parameter(np.ones(d_share))
        t["ln_b"] = ad.parameter(np.zeros(d_share))
        return cls(t, heads)

    def params(self) -> dict[str, ad.Tensor]:
        return dict(self.t)


def label_query_attend(queries, keys_values, params: LqnParams, return_weights: bool = False):
    """LN(MHA(q_c, kv_i)) for every (sample i, label c); no residual path.

    queries: [C, d_share]; keys_values: [B, T', d_share] -> [B, C, d_share].
    With ``return_weights`` the attention tensor [B, h, C, T'] comes back too.
    """
    q_in, kv = ad.as_tensor(queries), ad.as_tensor(keys_values)
    d, h = params.dim, params.heads
    if q_in.ndim != 2 or q_in.shape[1] != d:
        raise ValidationError(f"queries must be [C, {d}], got {q_in.shape}")
    if kv.ndim != 3 or kv.shape[2] != d or kv.shape[1] < 1:
        raise ValidationError(f"keys/values must be [B, T', {d}] with T' >= 1, got {kv.shape}")
    c = q_in.shape[0]
    b, t = kv.shape[:2]
    dh = d // h
    p = params.t

    q = (q_in @ p["wq"] + p["bq"]).reshape(c, h, dh).transpose(1, 0, 2)          # [h, C, dh]
    k = (kv @ p["wk"] + p["bk"]).reshape(b, t, h, dh).transpose(0, 2, 3, 1)      # [B, h, dh, T']
    v = (kv @ p["wv"] + p["bv"]).reshape(b, t, h, dh).transpose(0, 2, 1, 3)      # [B, h, T', dh]

    scores = (q @ k) * (1.0 / np.sqrt(dh))                                        # [B, h, C, T']
    attn = ad.softmax(scores, axis=-1)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(b, c, d)                       # [B, C, d]
    out = ad.layer_norm(ctx @ p["wo"] + p["bo"], p["ln_g"], p["ln_b"])
    return (out, attn) if return_weights else out


def label_embeddings(labels, emb: HashEmbedder, head: ProjectionHead) -> ad.Tensor:
    """Embed each label's full name and project into the shared space: [C, d_share]."""
    labs: list[Label] = [label(x) for x in labels]
    z = emb.embed_many([lab.full_name for lab in labs])
    return project(z, head)

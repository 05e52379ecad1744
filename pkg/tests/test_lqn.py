from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peace import autodiff as ad
from peace.descriptors import HashEmbedder
from peace.encoders import ProjectionHead
from peace.errors import ValidationError
from peace.lqn import LqnParams, label_embeddings, label_query_attend
from peace.ontology import LABELS


def _params(d, h, seed=0):
    p = LqnParams.init(d, h, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 100)
    for k in ("bq", "bk", "bv", "bo", "ln_b"):
        p.t[k].data = rng.normal(size=d) * 0.1
    p.t["ln_g"].data = 1 + 0.1 * rng.normal(size=d)
    return p


def oracle(q, kv, p, h):
    """One head, one sample, one label at a time."""
    t = {k: v.data for k, v in p.t.items()}
    b, n, d = kv.shape
    dh = d // h
    out = np.zeros((b, q.shape[0], d))
    for i in range(b):
        for c in range(q.shape[0]):
            ctx = np.zeros(d)
            qc = q[c] @ t["wq"] + t["bq"]
            for head in range(h):
                sl = slice(head * dh, (head + 1) * dh)
                scores = []
                for j in range(n):
                    k = kv[i, j] @ t["wk"] + t["bk"]
                    scores.append(np.dot(qc[sl], k[sl]) / np.sqrt(dh))
                e = np.exp(np.array(scores) - max(scores))
                a = e / e.sum()
                for j in range(n):
                    v = kv[i, j] @ t["wv"] + t["bv"]
                    ctx[sl] += a[j] * v[sl]
            y = ctx @ t["wo"] + t["bo"]
            mu, var = y.mean(), y.var()
            out[i, c] = (y - mu) / np.sqrt(var + 1e-5) * t["ln_g"] + t["ln_b"]
    return out


def test_loop_oracle():
    rng = np.random.default_rng(0)
    p = _params(8, 2)
    q, kv = rng.normal(size=(3, 8)), rng.normal(size=(2, 5, 8))
    np.testing.assert_allclose(label_query_attend(q, kv, p).data, oracle(q, kv, p, 2), atol=1e-6)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 4), st.integers(1, 6), st.sampled_from([1, 2, 4]))
def test_weights_sum_to_one_and_duplication(seed, b, c, t, h):
    rng = np.random.default_rng(seed)
    p = _params(8, h, seed)
    q, kv = rng.normal(size=(c, 8)), rng.normal(size=(b, t, 8))
    out, attn = label_query_attend(q, kv, p, return_weights=True)
    assert attn.shape == (b, h, c, t)
    assert np.all(attn.data >= 0)
    np.testing.assert_allclose(attn.data.sum(axis=-1), 1.0, atol=1e-6)
    dup = label_query_attend(q, np.concatenate([kv, kv], axis=1), p).data
    np.testing.assert_allclose(dup, out.data, atol=1e-6)


def test_single_token_ignores_query():
    rng = np.random.default_rng(1)
    p = _params(8, 4)
    kv = rng.normal(size=(2, 1, 8))
    a = label_query_attend(rng.normal(size=(3, 8)), kv, p).data
    b = label_query_attend(rng.normal(size=(3, 8)), kv, p).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_allclose(a[:, 0], a[:, 2], atol=1e-12)


def test_equivariance():
    rng = np.random.default_rng(2)
    p = _params(8, 2)
    q, kv = rng.normal(size=(4, 8)), rng.normal(size=(3, 5, 8))
    out = label_query_attend(q, kv, p).data
    np.testing.assert_allclose(label_query_attend(q[[3, 1, 0, 2]], kv, p).data, out[:, [3, 1, 0, 2]], atol=1e-12)
    np.testing.assert_allclose(label_query_attend(q, kv[[2, 0, 1]], p).data, out[[2, 0, 1]], atol=1e-12)


def test_shape_errors():
    p = _params(8, 2)
    with pytest.raises(ValidationError):
        LqnParams.init(8, 3, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        label_query_attend(np.zeros((2, 6)), np.zeros((1, 3, 8)), p)
    with pytest.raises(ValidationError):
        label_query_attend(np.zeros((2, 8)), np.zeros((1, 0, 8)), p)


def test_label_embeddings():
    emb = HashEmbedder(16)
    head = ProjectionHead.init(16, 8, np.random.default_rng(0))
    z = label_embeddings(LABELS, emb, head).data
    assert z.shape == (12, 8)
    d = np.linalg.norm(z[:, None] - z[None], axis=-1)
    assert np.all(d[~np.eye(12, dtype=bool)] > 1e-9)
    twice = label_embeddings(["LVH", "LVH"], emb, head).data
    np.testing.assert_array_equal(twice[0], twice[1])
    zero = ProjectionHead(np.zeros((16, 16)), np.zeros(16), np.zeros((16, 8)), np.zeros(8))
    assert not label_embeddings(LABELS, emb, zero).data.any()


def test_attention_gradients():
    rng = np.random.default_rng(3)
    p = _params(4, 2)
    q, kv = ad.parameter(rng.normal(size=(2, 4))), ad.parameter(rng.normal(size=(2, 3, 4)))
    r = rng.normal(size=(2, 2, 4))
    f = lambda: (label_query_attend(q, kv, p) * r).sum()
    # the key bias shifts every score of a query equally, so softmax cancels it
    params = [q, kv] + [t for k, t in p.params().items() if k != "bk"]
    assert ad.grad_check(f, params) < 1e-4
    p.t["bk"].grad = None
    f().backward()
    np.testing.assert_allclose(p.t["bk"].grad, 0.0, atol=1e-12)

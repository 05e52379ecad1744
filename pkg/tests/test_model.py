from __future__ import annotations

import numpy as np
import pytest

from conftest import composite_loss_fn, tiny_config
from peace import autodiff as ad
from peace.config import PARAM_GROUPS
from peace.errors import ValidationError
from peace.model import PeaceModel
from peace.ontology import to_label_vector

CODES3 = ("CRBBB", "IRBBB", "LAFB")


def _batch(b=4, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(b, 12, 100))
    y = np.stack([to_label_vector([CODES3[i % 3]] + (["LAFB"] if i == 1 else [])) for i in range(b)])
    return x, y


def test_forward_shapes_and_groups():
    cfg = tiny_config()
    m = PeaceModel.init(cfg, CODES3, seed=1)
    x, y = _batch()
    out = m.forward(x, y)
    assert out.logits_ecg.shape == (4, 3) and out.logits_rep.shape == (4, 3)
    assert out.z_ecg.shape == out.z_rep.shape == (4, 3, 4)
    assert {k.split(".", 1)[0] for k in m.named_parameters()} == set(PARAM_GROUPS)
    np.testing.assert_array_equal(m.predict_scores(x), out.logits_ecg.data)
    assert m.forward(x).z_ecg is None
    with pytest.raises(ValidationError):
        m.forward(x, y[:, :3])


def test_state_dict_round_trip_and_hash():
    cfg = tiny_config()
    a, b = PeaceModel.init(cfg, CODES3, 1), PeaceModel.init(cfg, CODES3, 2)
    assert a.param_hash() != b.param_hash()
    b.load_state_dict(a.state_dict())
    assert a.param_hash() == b.param_hash()
    bad = a.state_dict()
    bad.pop("fusion.bias")
    with pytest.raises(ValidationError):
        b.load_state_dict(bad)


def test_trainable_excludes_frozen():
    m = PeaceModel.init(tiny_config(), CODES3)
    names = m.trainable(("fusion", "lqn"))
    assert not any(k.startswith(("fusion.", "lqn.")) for k in names)
    assert len(m.trainable(PARAM_GROUPS)) == 0


def test_composite_objective_gradients():
    m = PeaceModel.init(tiny_config(), CODES3, seed=3)
    x, y = _batch()
    f = composite_loss_fn(m, x, y)
    # key biases cancel inside the softmax, so their gradient is identically zero
    params = [t for k, t in m.named_parameters().items() if k != "lqn.bk"]
    assert ad.grad_check(f, params, max_coords=4) < 1e-4

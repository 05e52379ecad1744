from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from peace.config import from_dict

settings.register_profile("peace", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("peace")


SMALL = {
    "data": {"n_classes": 3, "per_class": 20, "fs": 100.0, "seconds": 5.0, "noise": 0.3},
    "encoder": {"input_len": 500, "channels": [8, 16, 16, 16], "kernels": [7, 5, 5, 5], "strides": [4, 2, 2, 2]},
    "lqn": {"d_share": 8, "heads": 2, "emb_dim": 16},
    "caf": {"window": 5, "epsilon": 0.05},
    "optim": {"batch_size": 16, "epochs": 2, "warmup_epochs": 1},
}


def small_config(**sections):
    d = {k: dict(v) for k, v in SMALL.items()}
    for k, v in sections.items():
        d.setdefault(k, {}).update(v)
    return from_dict(d)


@pytest.fixture
def small_cfg():
    return small_config()


@pytest.fixture(scope="session")
def small_data():
    from peace.harness import dataset_from_config
    return dataset_from_config(small_config())


@pytest.fixture
def rng():
    return np.random.default_rng(0)


TINY = {
    "data": {"n_classes": 3, "per_class": 4, "fs": 20.0, "seconds": 5.0},
    "encoder": {"input_len": 100, "channels": [6, 8], "kernels": [5, 3], "strides": [2, 2], "activation": "gelu"},
    "lqn": {"d_share": 4, "heads": 2, "emb_dim": 8},
}


def tiny_config(**sections):
    d = {k: dict(v) for k, v in TINY.items()}
    for k, v in sections.items():
        d.setdefault(k, {}).update(v)
    return from_dict(d)


def composite_loss_fn(model, x, y, w=0.5, lam=1.0, tau=0.5):
    """Closure over the full objective: both branch BCEs plus the weighted alignment term."""
    from peace.lsbc import lsbc_loss
    from peace.objective import ObjectiveConfig, class_weights, total_loss, weighted_bce

    target = y[:, model.cols]
    cw = class_weights(np.maximum(target.sum(axis=0), 1))

    def f():
        out = model.forward(x, y)
        ce_e = weighted_bce(out.logits_ecg, target, cw)
        ce_r = weighted_bce(out.logits_rep, target, cw)
        return total_loss(ce_e, ce_r, lsbc_loss(out.z_ecg, out.z_rep, target, tau), w, ObjectiveConfig(lam))
    return f

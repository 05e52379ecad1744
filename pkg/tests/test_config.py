from __future__ import annotations

import json

import pytest

from peace.config import RunConfig, config_hash, from_dict, load_config, override, to_dict
from peace.errors import ConfigError


def test_defaults_validate_and_round_trip(tmp_path):
    cfg = load_config(None)
    assert cfg == RunConfig()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(to_dict(cfg)))
    assert load_config(path) == cfg
    assert config_hash(load_config(path)) == config_hash(cfg)
    assert len(config_hash(cfg)) == 16


@pytest.mark.parametrize("obj,frag", [
    ({"optim": {"lr": 1}}, "unknown config key optim.lr"),
    ({"nope": {}}, "unknown config key nope"),
    ({"pipeline": {"filters": {"q": 1}}}, "unknown config key pipeline.filters.q"),
    ({"optim": {"batch_size": "32"}}, "optim.batch_size"),
    ({"optim": {"batch_size": 0}}, "optim.batch_size"),
    ({"regime": {"regime": "fewshot"}}, "regime.n_per_class"),
    ({"regime": {"regime": "semi"}}, "regime.regime"),
    ({"regime": {"frozen_groups": ["bert"]}}, "regime.frozen_groups"),
    ({"caf": {"mode": "always"}}, "caf.mode"),
    ({"lqn": {"heads": 5}}, "lqn.heads"),
    ({"data": {"seconds": 5.0}}, "encoder.input_len"),
    ({"lsbc": {"tau": 0}}, "lsbc.tau"),
])
def test_errors_name_the_key(obj, frag):
    with pytest.raises(ConfigError, match=frag.replace(".", r"\.")):
        from_dict(obj)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{oops")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


def test_override_and_hash_sensitivity():
    base = RunConfig()
    changed = override(base, optim={"seed": 3})
    assert changed.optim.seed == 3 and base.optim.seed == 0
    assert config_hash(changed) != config_hash(base)
    assert config_hash(override(base)) == config_hash(base)
    assert override(base, caf={"knots": [0.2, 0.6]}).caf.knots == (0.2, 0.6)
    with pytest.raises(ConfigError):
        override(base, bogus={"x": 1})


def test_regime_learning_rates():
    o = RunConfig().optim
    assert o.lr_for("fewshot") == 2.5e-5 and o.lr_for("full") == 1e-4
    assert override(RunConfig(), optim={"lr_init": 3e-4}).optim.lr_for("full") == 3e-4

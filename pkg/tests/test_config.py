import json

import pytest

from promptbo.config import RunConfig, digest, normalize
from promptbo.errors import ConfigError


def test_defaults():
    cfg = normalize({})
    assert cfg["budget"] == 30 and cfg["strategy"] == "deep_kernel"
    assert cfg["provider"] == {"kind": "offline", "dim": 256, "seed": None}
    assert cfg["evaluator"]["kind"] == "synthetic" and cfg["evaluator"]["noise_std"] == 0.005
    assert cfg["features"] == {"dim_token": 64, "dim_out": 128, "proj_dropout": 0.1}


def test_semantically_equal_configs_share_digest():
    a = normalize({"seed": 1, "budget": 30})
    b = normalize(json.loads('{"budget": 30.0, "seed": 1, "template": {"style": "domain_aware"}, '
                             '"provider": {"kind": "offline", "dim": 256}, "output_dir": "elsewhere"}'))
    assert digest(a) == digest(b)
    explicit = normalize({"seed": 1, "space": {"axes": [
        {"name": "rank", "values": [1, 2, 4, 8, 16, 32, 64, 128, 256]},
        {"name": "alpha_multiplier", "values": [0.5, 1, 2, 4, 8, 16, 32, 64, 128]},
        {"name": "batch_size", "values": [2, 4, 8, 16, 32, 64, 128, 256]},
        {"name": "learning_rate", "values": [1e-6, 5e-6, 1e-5, 2e-5, 5e-5, 1e-4, 3e-4, 5e-4, 1e-3, 5e-3]},
        {"name": "dropout", "values": [0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3]}]}})
    assert digest(explicit) == digest(a)


def test_semantic_changes_change_digest():
    base = digest(normalize({}))
    for change in ({"seed": 1}, {"budget": 31}, {"strategy": "random"}, {"template": {"style": "plain"}},
                   {"features": {"dim_out": 64}}, {"evaluator": {"kind": "synthetic", "landscape_seed": 2}}):
        assert digest(normalize(change)) != base


def test_seed_override():
    assert RunConfig.from_mapping({"seed": 1}, seed=9)["seed"] == 9


@pytest.mark.parametrize("raw, path", [
    ({"provider": {"kind": "remote", "model": "m"}}, "provider.url"),
    ({"provider": {"kind": "remote", "url": "http://x"}}, "provider.model"),
    ({"provider": {"kind": "cloud"}}, "provider.kind"),
    ({"provider": {"kind": "offline", "dim": 1}}, "provider.dim"),
    ({"budget": 0}, "budget"),
    ({"budget": 2.5}, "budget"),
    ({"budget": 45_361}, "budget"),
    ({"strategy": "tpe"}, "strategy"),
    ({"colour": 1}, "colour"),
    ({"template": {"style": "fancy"}}, "template.style"),
    ({"features": {"proj_dropout": 1.0}}, "features.proj_dropout"),
    ({"features": {"width": 3}}, "features.width"),
    ({"evaluator": {"kind": "synthetic", "fraction": 0}}, "evaluator.fraction"),
    ({"evaluator": {"kind": "external", "total_count": 10}}, "evaluator.command"),
    ({"evaluator": {"kind": "external", "command": ["x"]}}, "evaluator.total_count"),
    ({"warm_start": [{"rank": 8}]}, "warm_start[0]"),
    ({"space": {"axes": [{"name": "rank", "values": [1, 2]}]}}, "space.axes"),
    ({"correlation": {"sample_size": 5}}, "correlation"),
    ({"diagnostics": "yes"}, "diagnostics"),
    ({"seed": True}, "seed"),
])
def test_invalid_fields_are_named(raw, path):
    with pytest.raises(ConfigError) as info:
        normalize(raw)
    assert info.value.path == path
    assert str(info.value).startswith(path)


def test_auth_env_holds_a_variable_name():
    cfg = normalize({"provider": {"kind": "remote", "url": "http://x", "model": "m", "auth_env": "EMBED_TOKEN"}})
    assert cfg["provider"]["auth_env"] == "EMBED_TOKEN"


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError):
        RunConfig.load(bad)

import json

import pytest

from promptloop.config import ConfigError, ModelBinding, RunConfig, load_config
from promptloop.lm import ScriptedBackend
from promptloop.optimizer import gateways_from_config

MINIMAL = {"environment_id": "keyword", "bundle": "keyword", "feedback_style": "td",
           "rewrite_mode": "replay", "epochs": 2, "seeds": [0, 1],
           "models": {"default": {"backend": "factory",
                                  "factory": "promptloop.scripted:keyword_teacher"}}}


def write(tmp_path, data):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return path


def test_load_minimal(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL))
    assert cfg.seeds == (0, 1) and cfg.batch_size == 10 and cfg.k == 2
    assert cfg.binding("rewriter").factory == "promptloop.scripted:keyword_teacher"


@pytest.mark.parametrize("field", ["epochs", "seeds", "models", "environment_id"])
def test_missing_required_field(tmp_path, field):
    data = {k: v for k, v in MINIMAL.items() if k != field}
    with pytest.raises(ConfigError, match=f"'{field}': missing"):
        load_config(write(tmp_path, data))


@pytest.mark.parametrize("patch, field", [
    ({"feedback_style": "vibes"}, "feedback_style"),
    ({"rewrite_mode": "greedy"}, "rewrite_mode"),
    ({"epochs": 0}, "epochs"),
    ({"epochs": 1.5}, "epochs"),
    ({"seeds": []}, "seeds"),
    ({"seeds": ["a"]}, "seeds"),
    ({"gamma": 2.0}, "gamma"),
    ({"signals": "most"}, "signals"),
    ({"colour": "red"}, "colour"),
    ({"models": {"judge": {}}}, "models.judge"),
    ({"models": {"default": {"backend": "http"}}}, "models.default.base_url"),
    ({"models": {"default": {"backend": "tcp"}}}, "models.default.backend"),
    ({"models": {"default": {"temp": 1}}}, "models.default.temp"),
])
def test_invalid_fields_are_named(tmp_path, patch, field):
    with pytest.raises(ConfigError) as info:
        load_config(write(tmp_path, {**MINIMAL, **patch}))
    assert info.value.field == field


def test_not_json(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(path)


def test_snapshot_is_json_and_round_trips():
    cfg = RunConfig.from_dict({**MINIMAL})
    snap = cfg.snapshot()
    assert json.loads(json.dumps(snap)) == snap
    assert RunConfig.from_dict(snap) == cfg


def test_binding_fallbacks():
    cfg = RunConfig("keyword", models={"rewriter": ModelBinding(model_id="big")})
    assert cfg.binding("rewriter").model_id == "big"
    assert cfg.binding("feedbacker") == ModelBinding()


def test_shared_binding_shares_backend():
    gws = gateways_from_config(RunConfig.from_dict(MINIMAL))
    assert gws["feedbacker"].backend is gws["rewriter"].backend
    scripted = RunConfig.from_dict({**MINIMAL, "models": {
        "default": {"rules": [{"response": "hi", "tag": "system-agent"}]}}})
    gw = gateways_from_config(scripted)["system-agent"]
    assert isinstance(gw.backend, ScriptedBackend)

import json

import pytest

from sorsnn.config import ConfigError, RunConfig, apply_overrides, from_dict, load_config


def test_defaults_resolve():
    cfg = load_config()
    assert cfg.loss.alpha == 0.5 and cfg.loss.beta == 1e-5
    assert cfg.model.lif.tau == 0.2 and cfg.model.lif.t_window == 4
    assert cfg.model.regulator.hidden == 96
    assert cfg.optim.lr == 1e-3 and cfg.optim.batch_size == 32 and cfg.optim.epochs == 50


def test_json_echo_roundtrip():
    cfg = load_config(None, ["seed=11", "loss.beta=0.001", "model.lif.reset_mode=\"subtract\""])
    again = from_dict(json.loads(cfg.to_json()))
    assert again == cfg
    assert again.to_json() == cfg.to_json()


def test_overrides_parse_json_values():
    d = apply_overrides({}, ["a.b=3", "a.c=[1,2]", "s=plain", "f=1e-3", "t=true"])
    assert d == {"a": {"b": 3, "c": [1, 2]}, "s": "plain", "f": 1e-3, "t": True}


@pytest.mark.parametrize("override,path", [
    ("loss.delta=1", "loss.delta"),
    ("optim.batch_size=\"big\"", "optim.batch_size"),
    ("optim.batch_size=0", "optim.batch_size"),
    ("model.lif.tau=1.5", "model.lif"),
    ("method=\"ewc\"", "method"),
    ("injury_fraction=2", "injury_fraction"),
    ("model.regulator.handoff=1", "model.regulator.handoff"),
])
def test_invalid_fields_name_their_path(override, path):
    with pytest.raises(ConfigError) as exc:
        load_config(None, [override])
    assert exc.value.path == path


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.json")


def test_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{oops")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


def test_file_source_requires_paths():
    with pytest.raises(ConfigError, match="tasks.train_path"):
        load_config(None, ["tasks.source=\"file\""])


def test_file_plus_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 3, "loss": {"alpha": 2.0}}))
    cfg = load_config(p, ["seed=7"])
    assert cfg.seed == 7 and cfg.loss.alpha == 2.0


def test_layers_follow_config():
    cfg = RunConfig()
    names = [s.name for s in cfg.layers()]
    assert names == ["conv1", "conv2", "fc1", "fc_out"]
    assert cfg.layers()[-1].out_shape == (cfg.tasks.classes_per_task,)

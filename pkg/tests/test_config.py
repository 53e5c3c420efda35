import json

import pytest

from refrec.config import (
    TrainConfig,
    check_architecture,
    config_file,
    get_config,
    get_default_path,
    load_config,
    set_config,
)


def test_defaults_are_valid():
    cfg = TrainConfig().validate()
    assert cfg.batch_size == 16 and cfg.lr == 1e-3 and cfg.order_policy == "random"


def test_round_trip_through_dict():
    cfg = TrainConfig(batch_size=4, language=False, t_max=7)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_unknown_keys_named():
    with pytest.raises(ValueError, match="momentum"):
        TrainConfig.from_dict({"batch_size": 4, "momentum": 0.9})


@pytest.mark.parametrize("field,value", [
    ("batch_size", 0),
    ("lr", 0.0),
    ("max_steps", -1),
    ("eval_interval", 0),
    ("order_policy", "alphabetical"),
    ("t_max", 0),
    ("hidden", [32, 32]),
    ("side", 60),
])
def test_invalid_values(field, value):
    with pytest.raises(ValueError):
        TrainConfig.from_dict({field: value})


def test_baseline_decoder_has_no_language_channels():
    assert TrainConfig(language=False).decoder().embed_dim == 0
    assert TrainConfig(language=True).decoder().embed_dim == 16


def test_from_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"batch_size": 2, "max_steps": 5}))
    cfg = TrainConfig.from_json(path)
    assert cfg.batch_size == 2 and cfg.max_steps == 5


def test_from_json_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        TrainConfig.from_json(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    with pytest.raises(ValueError, match="bad.json"):
        TrainConfig.from_json(bad)
    listy = tmp_path / "list.json"
    listy.write_text("[1, 2]")
    with pytest.raises(ValueError):
        TrainConfig.from_json(listy)


def test_architecture_mismatch_names_fields():
    echo = TrainConfig(hidden=[32, 32, 16, 16]).to_dict()
    check_architecture(echo, TrainConfig(lr=0.5, max_steps=1))
    with pytest.raises(ValueError, match="hidden"):
        check_architecture(echo, TrainConfig(hidden=[16, 16, 16, 16]))


def test_user_defaults(tmp_path):
    assert load_config() == {}
    set_config("default_data", str(tmp_path / "data"))
    assert get_config("default_data") == str(tmp_path / "data")
    assert get_default_path("default_data") == tmp_path / "data"
    assert get_default_path("default_output") is None
    assert config_file().exists()


def test_unknown_user_key():
    with pytest.raises(ValueError):
        set_config("magic", "x")


def test_unreadable_user_config_is_empty():
    config_file().parent.mkdir(parents=True, exist_ok=True)
    config_file().write_text("{broken")
    assert load_config() == {}

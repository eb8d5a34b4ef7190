import json

import pytest

from tmoser.config import DEFAULTS, ConfigError, config_hash, load_config, validate


def write(tmp_path, text):
    p = tmp_path / "cfg.json"
    p.write_text(text)
    return p


def test_minimal_config_is_filled_in(tmp_path):
    cfg = load_config(write(tmp_path, '{"n": 2}'))
    assert cfg["n"] == 2
    assert cfg["grid"] == DEFAULTS["grid"]
    assert cfg["bubble"]["rmax"] == 100.0
    assert cfg["green"]["R_max"] == 40.0
    assert cfg["maximize"]["beta_factor"] == [0.9]
    assert set(cfg) == set(DEFAULTS)


def test_per_dimension_defaults():
    assert validate({"n": 3})["bubble"]["rmax"] == 200.0
    assert validate({"n": 3})["green"]["R_max"] == 45.0
    assert validate({"n": 4})["bubble"]["rmax"] == 1000.0


def test_defaults_not_mutated():
    cfg = validate({"n": 2, "grid": {"inner_count": 64}})
    cfg["grid"]["outer_count"] = 1
    assert DEFAULTS["grid"]["inner_count"] == 256
    assert DEFAULTS["grid"]["outer_count"] == 384


@pytest.mark.parametrize(
    "raw,message",
    [
        ({"n": 1}, "n: n must be >= 2"),
        ({}, "n: required"),
        ({"nn": 2}, "nn: unknown key"),
        ({"n": 2, "grid": {"inner": 3}}, "grid.inner: unknown key"),
        ({"n": 2.5}, "n: wrong type"),
        ({"n": True}, "n: wrong type"),
        ({"n": 2, "grid": 5}, "grid: expected an object"),
        ({"n": 2, "grid": {"inner_count": 4}}, "grid.inner_count: must be >= 8"),
        ({"n": 2, "green": {"tol": -1.0}}, "green.tol: must be positive"),
        ({"n": 2, "test1": {"eps": [0.5]}}, "test1.eps"),
        ({"n": 2, "test2": {"c": ["a"]}}, "test2.c: expected a list of numbers"),
        ({"n": 2, "maximize": {"beta_factor": [1.2]}}, "maximize.beta_factor: must be <= 1"),
        ({"n": 2, "maximize": {"R": [1.0, 2.0]}}, "maximize.beta_factor: must have the same length"),
    ],
)
def test_rejections(raw, message):
    with pytest.raises(ConfigError) as info:
        validate(raw)
    assert message in str(info.value)


def test_duplicate_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="n: duplicate key"):
        load_config(write(tmp_path, '{"n": 2, "n": 3}'))


def test_malformed_and_missing_files(tmp_path):
    with pytest.raises(ConfigError, match="malformed JSON"):
        load_config(write(tmp_path, '{"n": 2,'))
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.json")
    with pytest.raises(ConfigError, match="expected a JSON object"):
        load_config(write(tmp_path, "[2]"))


def test_config_hash_is_stable():
    a = validate({"n": 2, "seed": 3})
    b = validate(json.loads(json.dumps({"seed": 3, "n": 2})))
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(validate({"n": 2, "seed": 4}))
    assert len(config_hash(a)) == 64

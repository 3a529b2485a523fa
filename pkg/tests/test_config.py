import math

import pytest

from scengen.config import (
    DEFAULTS,
    env_config,
    load_config,
    parse_ratio,
    train_config,
)
from scengen.errors import ConfigError


@pytest.fixture(autouse=True)
def no_env_config(monkeypatch):
    monkeypatch.delenv("SCENGEN_CONFIG", raising=False)


def test_defaults_without_file():
    cfg = load_config()
    assert cfg["env"]["dt"] == 0.04
    assert cfg["train_bv"]["beta"] == 1.0
    assert cfg["evaluate"]["episodes"] == 100
    # a fresh copy each call, never the shared table
    cfg["env"]["dt"] = 99.0
    assert load_config()["env"]["dt"] == 0.04
    assert DEFAULTS["env"]["dt"] == 0.04


def test_file_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("env:\n  dt: 0.1\ntrain_bv:\n  beta: 0.25\n  hidden: [64, 64]\n")
    cfg = load_config(path)
    assert cfg["env"]["dt"] == 0.1
    assert cfg["env"]["horizon"] == 100  # untouched keys keep defaults
    assert cfg["train_bv"]["beta"] == 0.25
    assert cfg["train_bv"]["hidden"] == [64, 64]


def test_env_var_fallback(tmp_path, monkeypatch):
    path = tmp_path / "run.yaml"
    path.write_text("env:\n  horizon: 50\n")
    monkeypatch.setenv("SCENGEN_CONFIG", str(path))
    assert load_config()["env"]["horizon"] == 50
    # an explicit path still wins
    other = tmp_path / "other.yaml"
    other.write_text("env:\n  horizon: 70\n")
    assert load_config(other)["env"]["horizon"] == 70


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")

    bad = tmp_path / "bad.yaml"
    bad.write_text("nosuchsection:\n  a: 1\n")
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(bad)

    bad.write_text("env:\n  nosuchkey: 1\n")
    with pytest.raises(ConfigError, match="unknown key env.nosuchkey"):
        load_config(bad)

    bad.write_text("env: 5\n")
    with pytest.raises(ConfigError, match="must be a mapping"):
        load_config(bad)

    bad.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="top level"):
        load_config(bad)

    bad.write_text("env: {dt: [unclosed\n")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(bad)

    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert load_config(empty)["env"]["dt"] == 0.04


def test_parse_ratio():
    assert parse_ratio(1.5) == 1.5
    assert parse_ratio("2") == 2.0
    assert parse_ratio(0) == 0.0
    assert parse_ratio("inf") == math.inf
    assert parse_ratio(" Infinity ") == math.inf
    with pytest.raises(ConfigError):
        parse_ratio(-1.0)
    with pytest.raises(ConfigError):
        parse_ratio("half")
    with pytest.raises(ConfigError):
        parse_ratio(float("nan"))


def test_env_config_coercion():
    cfg = load_config()
    cfg["env"]["dt"] = "0.05"
    cfg["env"]["horizon"] = "200"
    env = env_config(cfg)
    assert env.dt == 0.05
    assert env.horizon == 200
    assert env.road.lane_count == 3
    assert env.road.width == 3 * 3.75
    assert env.dims.length == 5.0


def test_train_config_from_section():
    section = dict(load_config()["train_bv"])
    tc = train_config(section)
    assert tc.beta == 1.0
    assert tc.hidden == (256, 256)
    assert tc.entropy_alpha == "auto"
    # extra section keys (n_bvs, av) are ignored, overrides land on top
    tc = train_config(section, beta=0.25, seed=3, sim_real_ratio="inf")
    assert tc.beta == 0.25
    assert tc.seed == 3
    assert tc.sim_real_ratio == math.inf
    # None overrides mean "not given on the command line"
    tc = train_config(section, beta=None)
    assert tc.beta == 1.0
    section["entropy_alpha"] = "0.1"
    assert train_config(section).entropy_alpha == 0.1
    section["sim_real_ratio"] = "-2"
    with pytest.raises(ConfigError):
        train_config(section)

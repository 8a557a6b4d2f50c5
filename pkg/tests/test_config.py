import json
from pathlib import Path

import pytest
from vfl_tse import config
from vfl_tse.errors import ConfigError


def write(tmp_path, text):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    return p


def test_empty_file_gives_defaults(tmp_path):
    cfg = config.validate_config(write(tmp_path, ""))
    assert cfg == config.ExperimentConfig()
    assert cfg.game.beta == 11.0 and cfg.game.rho == 250.0 and cfg.econ.W == 150.0 and cfg.data.T == 300


def test_beta_below_one(tmp_path):
    with pytest.raises(ConfigError, match="beta must be ≥ 1"):
        config.validate_config(write(tmp_path, "game:\n  beta: 0.5\n"))


def test_typo_suggests_key(tmp_path):
    with pytest.raises(ConfigError, match="did you mean 'gamma0'"):
        config.validate_config(write(tmp_path, "game:\n  gamm0: 0.4\n"))


def test_misplaced_key_suggests_anyway(tmp_path):
    with pytest.raises(ConfigError, match="did you mean 'seeds'"):
        config.validate_config(write(tmp_path, "seed: [1]\n"))


def test_unknown_scenario_lists_valid(tmp_path):
    with pytest.raises(ConfigError, match="mechanism_compare"):
        config.validate_config(write(tmp_path, "scenario: fig99\n"))


@pytest.mark.parametrize("text,msg", [
    ("data:\n  T: 5\n", "tau_in"),
    ("mi:\n  lr: -1\n", "mi.lr"),
    ("seeds: []\n", "seeds"),
    ("seeds: [1.5]\n", "integers"),
    ("game:\n  cycles: many\n", "integer"),
    ("game:\n  mode: random\n", "game.mode"),
    ("sweep:\n  gamma0s: [1.2]\n", "gamma0s"),
    ("comm:\n  D_unit: kb\n", "D_unit"),
    ("vfl:\n  mi_samples: 5000\n", "mi_samples"),
    ("- a\n- b\n", "mapping"),
    ("game: [1]\n", "mapping"),
])
def test_out_of_range_values(tmp_path, text, msg):
    with pytest.raises(ConfigError, match=msg):
        config.validate_config(write(tmp_path, text))


def test_invalid_yaml_and_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="invalid YAML"):
        config.validate_config(write(tmp_path, "game: [\n"))
    with pytest.raises(ConfigError, match="not found"):
        config.validate_config(tmp_path / "nope.yaml")


def test_values_are_coerced(tmp_path):
    cfg = config.validate_config(write(tmp_path, "game:\n  rho: 300\nmi:\n  score_seeds: [3, 4]\n"))
    assert cfg.game.rho == 300.0 and isinstance(cfg.game.rho, float)
    assert cfg.mi.score_seeds == (3, 4)


def test_round_trip_through_dict(tiny):
    cfg = config.from_dict(tiny)
    again = config.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg and again.digest() == cfg.digest()


def test_digest_ignores_output_location(tiny):
    a = config.from_dict(dict(tiny, output_dir="x", jobs=1))
    b = config.from_dict(dict(tiny, output_dir="y", jobs=2))
    c = config.from_dict(dict(tiny, seeds=[1]))
    assert a.digest() == b.digest() != c.digest()


def test_game_params_follow_costs():
    cfg = config.from_dict({"econ": {"T_count": 17280}})
    p = cfg.game_params(beta=2)
    assert p.beta == 2 and p.H == pytest.approx(2 * config.ExperimentConfig().game_params().H)


def test_shipped_configs_are_valid():
    paths = sorted((Path(__file__).parent.parent / "configs").glob("*.yaml"))
    assert {config.validate_config(p).scenario for p in paths} == set(config.SCENARIOS)

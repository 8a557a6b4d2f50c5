"""Experiment configuration: YAML in, validated dataclasses out.

Every key has a default, so an empty file is a complete config. Unknown
keys are rejected with a close-match suggestion.
"""

from __future__ import annotations

import dataclasses
import difflib
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import data, economics, game
from .errors import ConfigError

SCENARIOS = ("mi_grid", "lazy_grid", "selection_compare", "lazy_mae", "beta_sweep", "rho_sweep", "bound_gap", "mechanism_compare")


@dataclass(frozen=True)
class DataConfig:
    T: int = 300
    tau_in: int = 9
    tau_out: int = 1
    dt: float = 10.0
    normalization: str = "zscore"
    scale: float = 0.02
    history_lag: int = 100

    def __post_init__(self):
        if self.tau_in < 1 or self.tau_out < 1:
            raise ConfigError("data.tau_in and data.tau_out must be ≥ 1")
        if self.T < self.tau_in + self.tau_out:
            raise ConfigError(f"data.T must be ≥ tau_in + tau_out = {self.tau_in + self.tau_out}, got {self.T}")
        if self.normalization not in ("zscore", "minmax"):
            raise ConfigError(f"data.normalization must be 'zscore' or 'minmax', got {self.normalization!r}")
        if not self.scale > 0 or not self.dt > 0:
            raise ConfigError("data.scale and data.dt must be > 0")
        if self.history_lag < 1:
            raise ConfigError("data.history_lag must be ≥ 1")

    def dynamics(self):
        return data.DynamicsParams(tau_in=self.tau_in, tau_out=self.tau_out, dt=self.dt, normalization=self.normalization, scale=self.scale)


@dataclass(frozen=True)
class MiConfig:
    steps: int = 300
    lr: float = 1e-2
    n: int = 50
    hidden: int = 64
    split_layer: int = 1
    score_seeds: tuple = (0, 1, 2, 3, 4)
    noise_grid: tuple = data.NOISE_GRID
    lazy_fractions: tuple = (0.2, 0.4, 0.6, 0.8, 1.0)

    def __post_init__(self):
        if self.steps < 1 or self.n < 1 or self.hidden < 1:
            raise ConfigError("mi.steps, mi.n and mi.hidden must be ≥ 1")
        if not self.lr > 0:
            raise ConfigError(f"mi.lr must be > 0, got {self.lr}")
        if not self.score_seeds:
            raise ConfigError("mi.score_seeds must be non-empty")
        if not self.noise_grid or min(self.noise_grid) < 0:
            raise ConfigError("mi.noise_grid must be non-empty with values ≥ 0")
        if any(not 0 < f <= 1 for f in self.lazy_fractions):
            raise ConfigError("mi.lazy_fractions must lie in (0, 1]")


@dataclass(frozen=True)
class SelectionConfig:
    providers: int = 6
    trials: int = 20  # selection-agreement trials; the first len(seeds) also train VFL models

    def __post_init__(self):
        if self.providers < 1 or self.trials < 1:
            raise ConfigError("selection.providers and selection.trials must be ≥ 1")


@dataclass(frozen=True)
class VflSection:
    T: int = 2000
    mi_samples: int = 300  # MI models train and score on the first mi_samples steps
    epochs: int = 50
    lr: float = 3e-4
    batch_size: int = 16
    embed_dim: int = 16
    bottom_hidden: int = 32
    top_hidden: int = 64
    train_fraction: float = 0.8
    lazy: str = "mp=3:random:1.0,mp=4:random:1.0"

    def __post_init__(self):
        if self.mi_samples < 2 or self.mi_samples > self.T:
            raise ConfigError(f"vfl.mi_samples must be in [2, vfl.T={self.T}], got {self.mi_samples}")
        self.vfl_config(0)

    def vfl_config(self, seed):
        from .vfl import VflConfig

        return VflConfig(self.embed_dim, self.bottom_hidden, self.top_hidden, self.lr, self.batch_size, self.epochs, self.train_fraction, seed)


@dataclass(frozen=True)
class GameConfig:
    rho: float = 250.0
    beta: float = 11.0
    gamma0: float = 0.5
    epsilon0: float = 0.5
    cycles: int = 500
    eta: float = 0.05
    honest_mae: float = 23.0
    lazy_mae: float = 30.0
    mode: str = "empirical"
    form: str = "harmonic"

    def __post_init__(self):
        if self.cycles < 1:
            raise ConfigError(f"game.cycles must be ≥ 1, got {self.cycles}")
        if not self.eta > 0:
            raise ConfigError(f"game.eta must be > 0, got {self.eta}")
        if self.mode not in ("empirical", "closed_form"):
            raise ConfigError(f"game.mode must be 'empirical' or 'closed_form', got {self.mode!r}")
        if self.form not in ("direct", "harmonic"):
            raise ConfigError(f"game.form must be 'direct' or 'harmonic', got {self.form!r}")


@dataclass(frozen=True)
class SweepConfig:
    betas: tuple = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0)
    rhos: tuple = (100.0, 150.0, 200.0, 250.0, 300.0, 350.0, 400.0)
    gamma0s: tuple = (0.3, 0.5, 0.7)
    epsilon0s: tuple = (0.3, 0.5, 0.7)
    bound_gamma0s: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

    def __post_init__(self):
        for name in ("betas", "rhos", "gamma0s", "epsilon0s", "bound_gamma0s"):
            if not getattr(self, name):
                raise ConfigError(f"sweep.{name} must be non-empty")
        if min(self.betas) < 1:
            raise ConfigError("beta must be ≥ 1 (sweep.betas)")
        if min(self.rhos) <= 0:
            raise ConfigError("sweep.rhos must be > 0")
        for name in ("gamma0s", "epsilon0s", "bound_gamma0s"):
            if any(not 0 <= v <= 1 for v in getattr(self, name)):
                raise ConfigError(f"sweep.{name} must lie in [0, 1]")


SECTIONS = {
    "data": DataConfig,
    "mi": MiConfig,
    "selection": SelectionConfig,
    "vfl": VflSection,
    "comm": economics.CommParams,
    "compute": economics.ComputeParams,
    "econ": economics.EconParams,
    "game": GameConfig,
    "sweep": SweepConfig,
}
TOP_KEYS = ("scenario", "seeds", "output_dir", "jobs", *SECTIONS)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "mi_grid"
    seeds: tuple = (0, 1, 2, 3, 4)
    output_dir: str = "out"
    jobs: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    mi: MiConfig = field(default_factory=MiConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    vfl: VflSection = field(default_factory=VflSection)
    comm: economics.CommParams = field(default_factory=economics.CommParams)
    compute: economics.ComputeParams = field(default_factory=economics.ComputeParams)
    econ: economics.EconParams = field(default_factory=economics.EconParams)
    game: GameConfig = field(default_factory=GameConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; valid: {', '.join(SCENARIOS)}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be ≥ 1, got {self.jobs}")
        if self.vfl.T < self.data.tau_in + self.data.tau_out:
            raise ConfigError(f"vfl.T must be ≥ tau_in + tau_out = {self.data.tau_in + self.data.tau_out}")
        self.game_params()

    def costs(self):
        return economics.costs(self.comm, self.compute, self.econ)

    def game_params(self, **over):
        g = dataclasses.replace(self.game, **{k: v for k, v in over.items() if k in ("rho", "beta", "gamma0", "epsilon0")})
        c = self.costs()
        return game.GameParams(g.rho, g.beta, self.econ.W, self.econ.S, c.H, c.H_prime, g.gamma0, g.epsilon0)

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    def digest(self):
        """Hash of everything that affects results (the output directory does not)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("jobs")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _all_leaf_keys():
    keys = set(TOP_KEYS)
    for cls in SECTIONS.values():
        keys.update(f.name for f in dataclasses.fields(cls))
    return sorted(keys)


def _unknown(key, where, valid):
    hint = difflib.get_close_matches(key, valid, n=1) or difflib.get_close_matches(key, _all_leaf_keys(), n=1)
    msg = f"unknown key {key!r} in {where}"
    if hint:
        msg += f"; did you mean {hint[0]!r}?"
    return ConfigError(msg)


def _coerce(cls, name, value):
    ftype = {f.name: f for f in dataclasses.fields(cls)}[name]
    default = ftype.default if ftype.default is not dataclasses.MISSING else None
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{cls.__name__}.{name} must be a list, got {value!r}")
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{name} must be a string, got {value!r}")
    return value


def from_dict(raw):
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    kw = {}
    for key, value in raw.items():
        if key not in TOP_KEYS:
            raise _unknown(key, "config", TOP_KEYS)
        if key in SECTIONS:
            cls = SECTIONS[key]
            names = [f.name for f in dataclasses.fields(cls)]
            value = {} if value is None else value
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be a mapping")
            for k in value:
                if k not in names:
                    raise _unknown(k, f"section {key!r}", names)
            kw[key] = cls(**{k: _coerce(cls, k, v) for k, v in value.items()})
        elif key == "seeds":
            if not isinstance(value, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in value):
                raise ConfigError(f"seeds must be a list of integers, got {value!r}")
            kw[key] = tuple(value)
        else:
            kw[key] = _coerce(ExperimentConfig, key, value)
    return ExperimentConfig(**kw)


def validate_config(path):
    """Parse and validate a YAML config file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML: {exc}") from None
    return from_dict(raw)

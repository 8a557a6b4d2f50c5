"""Synthetic vertically-partitioned traffic datasets.

A dataset holds, for every road segment, the ground-truth input windows
``[T, tau_in, |K_k|, s]`` and, for the whole network, the label windows
``[T, tau_out, |E|, s]``. States are ``(flow, density)``, each standardized
per road and then multiplied by ``DynamicsParams.scale`` (default 0.02, a
traffic-like magnitude). Provider views are derived from the ground truth by
additive Gaussian noise and, optionally, lazy substitution.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, ParseError, ValidationError

STATES = ("flow", "density")
NOISE_GRID = (0.0, 0.01, 0.05, 0.1, 0.2, 0.3)
LAZY_FRACTIONS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
LAZY_MODES = ("honest", "random_data", "historical_data")

# 2 x 4 grid of intersections:  0 1 2 3 / 4 5 6 7
_DEFAULT_SEGMENTS = (
    ((0, 1), (1, 0), (0, 4), (4, 0)),
    ((1, 2), (2, 1), (1, 5), (5, 1)),
    ((2, 3), (3, 2), (3, 7), (7, 3)),
    ((4, 5), (5, 4), (5, 6), (6, 5)),
    ((6, 7), (7, 6), (2, 6), (6, 2), (1, 6)),
)


@dataclass(frozen=True)
class Segment:
    id: int
    road_indices: tuple

    @property
    def size(self):
        return len(self.road_indices)


@dataclass(frozen=True)
class RoadNetwork:
    intersections: int
    roads: tuple  # (from_intersection, to_intersection) per road
    segments: tuple

    def __post_init__(self):
        seen = []
        for seg in self.segments:
            if not seg.road_indices:
                raise ConfigError(f"segment {seg.id} has no roads")
            seen.extend(seg.road_indices)
        if sorted(seen) != list(range(len(self.roads))):
            raise ConfigError("segments must partition the road set exactly once")
        if [s.id for s in self.segments] != list(range(len(self.segments))):
            raise ConfigError("segment ids must be 0..K-1 in order")
        for u, v in self.roads:
            if not (0 <= u < self.intersections and 0 <= v < self.intersections):
                raise ConfigError(f"road ({u}, {v}) references a missing intersection")

    @property
    def n_roads(self):
        return len(self.roads)

    @property
    def n_segments(self):
        return len(self.segments)

    def adjacency(self):
        """Symmetric road adjacency: roads sharing an intersection."""
        n = self.n_roads
        adj = np.zeros((n, n))
        for i, (a, b) in enumerate(self.roads):
            for j, (c, d) in enumerate(self.roads):
                if i != j and {a, b} & {c, d}:
                    adj[i, j] = 1.0
        return adj

    def to_dict(self):
        return {
            "intersections": self.intersections,
            "roads": [list(r) for r in self.roads],
            "segments": [list(s.road_indices) for s in self.segments],
        }

    @classmethod
    def from_dict(cls, data):
        segments = tuple(Segment(k, tuple(int(r) for r in roads)) for k, roads in enumerate(data["segments"]))
        return cls(int(data["intersections"]), tuple(tuple(int(x) for x in r) for r in data["roads"]), segments)


def default_network():
    """8 intersections, 21 directed roads, 5 segments."""
    roads, segments = [], []
    for k, group in enumerate(_DEFAULT_SEGMENTS):
        idx = tuple(range(len(roads), len(roads) + len(group)))
        roads.extend(group)
        segments.append(Segment(k, idx))
    return RoadNetwork(8, tuple(roads), tuple(segments))


@dataclass(frozen=True)
class DynamicsParams:
    tau_in: int = 9
    tau_out: int = 1
    dt: float = 10.0
    n_waves: int = 3
    period_range: tuple = (35.0, 260.0)
    phase_spread: float = 0.6  # per-road phase jitter around the shared wave, radians
    ar_coef: float = 0.9
    noise_scale: float = 0.35
    spatial_mix: float = 0.6
    free_flow_speed: float = 1.0
    jam_density: float = 1.0
    normalization: str = "zscore"  # "zscore" -> zero mean / unit variance, "minmax" -> [0, 1], per road/state
    scale: float = 0.02  # multiplier applied after normalization


@dataclass(frozen=True, eq=False)
class TrafficDataset:
    network: RoadNetwork
    features: tuple  # ground truth per segment, [T, tau_in, |K_k|, s]
    labels: np.ndarray  # [T, tau_out, |E|, s]
    dt: float = 10.0
    seed: int | None = None
    views: dict = field(default_factory=dict)  # (k, n) -> provider tensor

    def __post_init__(self):
        if len(self.features) != self.network.n_segments:
            raise ValidationError(f"{len(self.features)} feature tensors for {self.network.n_segments} segments")
        T, _, n_roads, s = self.labels.shape
        if n_roads != self.network.n_roads:
            raise ValidationError(f"labels cover {n_roads} roads, network has {self.network.n_roads}")
        for seg, x in zip(self.network.segments, self.features):
            if x.shape[0] != T or x.shape[2] != seg.size or x.shape[3] != s:
                raise ValidationError(f"segment {seg.id} features {x.shape} inconsistent with labels {self.labels.shape}")
        for (k, n), v in self.views.items():
            if v.shape != self.features[k].shape:
                raise ValidationError(f"view ({k}, {n}) has shape {v.shape}, expected {self.features[k].shape}")

    @property
    def T(self):
        return self.labels.shape[0]

    @property
    def tau_in(self):
        return self.features[0].shape[1]

    @property
    def tau_out(self):
        return self.labels.shape[1]

    @property
    def n_states(self):
        return self.labels.shape[3]

    @property
    def timestamps(self):
        return np.arange(self.T) * self.dt

    def segment(self, k):
        return self.network.segments[k]

    def with_views(self, views):
        return TrafficDataset(self.network, self.features, self.labels, self.dt, self.seed, dict(views))

    def equals(self, other):
        return (
            self.network == other.network
            and self.dt == other.dt
            and self.seed == other.seed
            and np.array_equal(self.labels, other.labels)
            and all(np.array_equal(a, b) for a, b in zip(self.features, other.features))
            and self.views.keys() == other.views.keys()
            and all(np.array_equal(v, other.views[key]) for key, v in self.views.items())
        )


def _round9(a):
    """Round to 9 significant digits, the on-disk precision."""
    return np.char.mod("%.9g", a).astype(np.float64)


def _road_series(network, length, rng, p):
    """Raw normalized (flow, density) series of shape [length, |E|, 2]."""
    n = network.n_roads
    periods = rng.uniform(*p.period_range, size=p.n_waves)
    amps = rng.uniform(0.5, 1.0, size=p.n_waves)
    base_phase = rng.uniform(0.0, 2 * np.pi, size=p.n_waves)
    road_phase = base_phase[None, :] + p.phase_spread * rng.standard_normal((n, p.n_waves))
    road_gain = rng.uniform(0.7, 1.3, size=n)
    t = np.arange(length)[:, None, None]
    waves = (amps * np.sin(2 * np.pi * t / periods + road_phase[None])).sum(axis=2) * road_gain

    adj = network.adjacency()
    mix = np.eye(n) + p.spatial_mix * adj / np.maximum(adj.sum(axis=1, keepdims=True), 1.0)
    shocks = rng.standard_normal((length, n)) @ mix.T
    ar = np.zeros((length, n))
    for i in range(1, length):
        ar[i] = p.ar_coef * ar[i - 1] + p.noise_scale * shocks[i]
    latent = waves + ar

    # occupancy in (0, 1) via a logistic squash, flow from a Greenshields curve
    density = p.jam_density / (1.0 + np.exp(-0.8 * latent))
    flow = p.free_flow_speed * density * (1.0 - density / p.jam_density)
    states = np.stack([flow, density], axis=-1)
    if p.normalization == "zscore":
        return p.scale * (states - states.mean(axis=0)) / states.std(axis=0)
    if p.normalization == "minmax":
        lo, hi = states.min(axis=0), states.max(axis=0)
        return p.scale * (states - lo) / (hi - lo)
    raise ConfigError(f"unknown normalization {p.normalization!r}")


def generate_synthetic(network=None, T=300, seed=0, params=None):
    """Seeded smooth spatio-temporal traffic dataset with ``T`` samples."""
    network = default_network() if network is None else network
    p = DynamicsParams() if params is None else params
    if p.tau_in < 1 or p.tau_out < 1:
        raise ConfigError("tau_in and tau_out must be >= 1")
    minimum = p.tau_in + p.tau_out
    if T < minimum:
        raise ConfigError(f"T must be ≥ {minimum} (tau_in={p.tau_in}, tau_out={p.tau_out}), got {T}")
    rng = np.random.default_rng(seed)
    raw = _round9(_road_series(network, T + p.tau_in + p.tau_out - 1, rng, p))
    idx = np.arange(T)[:, None]
    x_all = raw[idx + np.arange(p.tau_in)[None, :]]  # [T, tau_in, |E|, s]
    labels = raw[idx + p.tau_in + np.arange(p.tau_out)[None, :]]
    features = tuple(np.ascontiguousarray(x_all[:, :, list(seg.road_indices), :]) for seg in network.segments)
    return TrafficDataset(network, features, np.ascontiguousarray(labels), p.dt, seed)


@dataclass(frozen=True)
class NoiseProfile:
    mu: float = 0.0
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError(f"sigma must be ≥ 0, got {self.sigma}")


def derive_provider_view(dataset, segment, noise):
    """Ground-truth features of ``segment`` plus i.i.d. N(mu, sigma^2) noise."""
    k = segment.id if isinstance(segment, Segment) else int(segment)
    if not 0 <= k < dataset.network.n_segments:
        raise ConfigError(f"segment {k} is not part of the dataset's network")
    if isinstance(segment, Segment) and segment != dataset.network.segments[k]:
        raise ConfigError(f"segment {k} does not match the dataset's network")
    truth = dataset.features[k]
    if noise.mu == 0 and noise.sigma == 0:
        return truth.copy()
    z = np.random.default_rng(noise.seed).standard_normal(truth.shape)
    return truth + noise.mu + noise.sigma * z


@dataclass(frozen=True)
class LazyPolicy:
    mode: str = "honest"
    lazy_fraction: float = 0.0

    def __post_init__(self):
        if self.mode not in LAZY_MODES:
            raise ConfigError(f"unknown lazy mode {self.mode!r}; expected one of {LAZY_MODES}")
        if not 0.0 <= self.lazy_fraction <= 1.0:
            raise ConfigError(f"lazy_fraction must be in [0, 1], got {self.lazy_fraction}")


def historical_view(view, lag=100):
    """The same provider's data ``lag`` steps earlier (wrapping at the start)."""
    return np.roll(view, lag, axis=0)


def lazy_indices(T, fraction, seed):
    count = math.ceil(round(fraction * T, 9))
    return np.sort(np.random.default_rng(seed).choice(T, size=count, replace=False))


def apply_lazy_policy(view, policy, history=None, seed=0):
    """Replace ``ceil(fraction * T)`` time indices with random or historical data."""
    if policy.mode == "honest":
        return view.copy()
    if policy.mode == "historical_data":
        if history is None:
            raise ConfigError("historical_data laziness needs a history tensor")
        if history.shape != view.shape:
            raise DimensionError(f"history {history.shape} does not match view {view.shape}")
    rng = np.random.default_rng(seed)
    idx = lazy_indices(view.shape[0], policy.lazy_fraction, rng.integers(2**63))
    out = view.copy()
    if policy.mode == "random_data":
        out[idx] = rng.uniform(view.min(), view.max(), size=(len(idx),) + view.shape[1:])
    else:
        out[idx] = history[idx]
    return out


# -- persistence -----------------------------------------------------------

def _fmt(v):
    return format(v, ".9g")


def _write_tensor(path, header, tensor):
    """Long-format CSV: one row per element, index columns then value."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for index in np.ndindex(tensor.shape):
            w.writerow([*index, _fmt(tensor[index])])


def _read_tensor(path, header, shape):
    out = np.empty(shape)
    filled = np.zeros(shape, dtype=bool)
    ncol = len(header)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first != list(header):
            raise ParseError(f"expected header {','.join(header)}, got {first}", path, 1)
        for row in reader:
            line = reader.line_num
            if len(row) != ncol:
                raise ParseError(f"expected {ncol} fields, got {len(row)}", path, line)
            try:
                index = tuple(int(v) for v in row[:-1])
                value = float(row[-1])
            except ValueError as exc:
                raise ParseError(str(exc), path, line) from None
            if not all(0 <= i < n for i, n in zip(index, shape)):
                raise ValidationError(f"{path}:{line}: index {index} outside declared shape {shape}")
            if filled[index]:
                raise ValidationError(f"{path}:{line}: duplicate entry {index}")
            out[index] = value
            filled[index] = True
    if not filled.all():
        missing = int((~filled).sum())
        raise ValidationError(f"{path}: {missing} of {filled.size} entries missing for declared shape {shape}")
    return out


def save_dataset(dataset, directory):
    """Write ``meta.json``, ``labels.csv`` and one CSV per segment tensor.

    Values are written with 9 significant digits. Generated datasets already
    live on that grid, so they round-trip bit-exactly.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "network": dataset.network.to_dict(),
        "T": dataset.T,
        "dt": dataset.dt,
        "tau_in": dataset.tau_in,
        "tau_out": dataset.tau_out,
        "s": dataset.n_states,
        "seed": dataset.seed,
        "views": sorted([list(k) for k in dataset.views]),
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2))
    if dataset.tau_out == 1:
        _write_tensor(d / "labels.csv", ("t", "road", "state", "value"), dataset.labels[:, 0])
    else:
        _write_tensor(d / "labels.csv", ("t", "horizon", "road", "state", "value"), dataset.labels)
    header = ("t", "lag", "road", "state", "value")
    for k, x in enumerate(dataset.features):
        _write_tensor(d / f"segment_{k}_truth.csv", header, x)
    for (k, n), v in sorted(dataset.views.items()):
        _write_tensor(d / f"segment_{k}_provider_{n}.csv", header, v)


def load_dataset(directory):
    d = Path(directory)
    try:
        meta = json.loads((d / "meta.json").read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, d / "meta.json", exc.lineno) from None
    try:
        network = RoadNetwork.from_dict(meta["network"])
        T, tau_in, tau_out, s = (int(meta[k]) for k in ("T", "tau_in", "tau_out", "s"))
        dt = float(meta["dt"])
    except (KeyError, TypeError) as exc:
        raise ParseError(f"meta.json missing or malformed field: {exc}", d / "meta.json") from None
    n = network.n_roads
    if tau_out == 1:
        labels = _read_tensor(d / "labels.csv", ("t", "road", "state", "value"), (T, n, s))[:, None]
    else:
        labels = _read_tensor(d / "labels.csv", ("t", "horizon", "road", "state", "value"), (T, tau_out, n, s))
    header = ("t", "lag", "road", "state", "value")
    features = tuple(
        _read_tensor(d / f"segment_{seg.id}_truth.csv", header, (T, tau_in, seg.size, s)) for seg in network.segments
    )
    views = {}
    for k, nn in meta.get("views", []):
        shape = (T, tau_in, network.segments[k].size, s)
        views[(k, nn)] = _read_tensor(d / f"segment_{k}_provider_{nn}.csv", header, shape)
    return TrafficDataset(network, features, labels, dt, meta.get("seed"), views)

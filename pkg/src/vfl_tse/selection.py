"""Provider selection: one provider per segment, chosen by MI score."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data, mi
from .errors import ConfigError, ValidationError


@dataclass(frozen=True, eq=False)
class SelectionMatrix:
    a: np.ndarray  # K x N, one 1 per row

    def __post_init__(self):
        a = np.asarray(self.a)
        if a.ndim != 2:
            raise ValidationError(f"selection matrix must be 2-D, got shape {a.shape}")
        if not np.isin(a, (0, 1)).all():
            raise ValidationError("selection entries must be 0 or 1")
        bad = np.flatnonzero(a.sum(axis=1) != 1)
        if bad.size:
            raise ValidationError(f"rows {bad.tolist()} do not select exactly one provider")
        object.__setattr__(self, "a", a.astype(np.int64))

    @classmethod
    def from_choices(cls, choices, n_providers):
        a = np.zeros((len(choices), n_providers), dtype=np.int64)
        a[np.arange(len(choices)), choices] = 1
        return cls(a)

    @property
    def choices(self):
        return np.argmax(self.a, axis=1)

    @property
    def shape(self):
        return self.a.shape

    def equals(self, other):
        return np.array_equal(self.a, other.a)


@dataclass(frozen=True, eq=False)
class ScoreTable:
    scores: np.ndarray  # K x N
    seeds: tuple = ()  # scoring seeds averaged into each cell
    n: int = 50

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 2 or s.size == 0:
            raise ValidationError(f"score table must be a non-empty 2-D array, got shape {s.shape}")
        if not np.isfinite(s).all():
            raise ValidationError("score table has non-finite entries")
        object.__setattr__(self, "scores", s)


def objective(scores, selection):
    """P2 objective: sum of the selected scores."""
    return float(np.sum(np.asarray(scores) * selection.a))


def solve_p2(scores):
    """Row-wise argmax; ``np.argmax`` returns the lowest index on ties."""
    s = scores.scores if isinstance(scores, ScoreTable) else ScoreTable(scores).scores
    return SelectionMatrix.from_choices(np.argmax(s, axis=1), s.shape[1])


def oracle_selection(profiles):
    """Pick the least noisy provider per row, comparing (mu, sigma) lexicographically."""
    choices = []
    for row in profiles:
        if not row:
            raise ConfigError("every segment needs at least one provider")
        keys = [(p.mu, p.sigma) for p in row]
        choices.append(min(range(len(keys)), key=lambda n: (keys[n], n)))
    return SelectionMatrix.from_choices(choices, len(profiles[0]))


def random_selection(K, N, seed=0):
    if K < 1 or N < 1:
        raise ConfigError(f"K and N must be ≥ 1, got K={K}, N={N}")
    rng = np.random.default_rng(seed)
    return SelectionMatrix.from_choices(rng.integers(N, size=K), N)


def score_table(models, views, labels, n=50, seeds=(0, 1, 2, 3, 4)):
    """Average MI score of every provider view.

    ``models[k]`` is the segment's MI model and ``views[k][n]`` the n-th
    provider's feature tensor. Every provider in a row is scored on the
    same batches, so comparisons within a row are paired.
    """
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ConfigError("need at least one scoring seed")
    out = np.empty((len(views), len(views[0])))
    for k, row in enumerate(views):
        if len(row) != out.shape[1]:
            raise ValidationError(f"segment {k} has {len(row)} providers, expected {out.shape[1]}")
        for j, view in enumerate(row):
            out[k, j] = np.mean([mi.score_provider(models[k], view, labels, n, s) for s in seeds])
    return ScoreTable(out, seeds, n)


def diagonal_profiles(K, N=None, seed=0, grid=data.NOISE_GRID):
    """Per segment, provider n gets mu = sigma = one grid level, shuffled by ``seed``.

    Every provider in a row has a distinct noise level and the clean level is
    always present. Noise draws get their own seeds from the same stream.
    """
    N = len(grid) if N is None else N
    if N > len(grid):
        raise ConfigError(f"N={N} exceeds the {len(grid)} distinct grid levels")
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(K):
        levels = rng.permutation(len(grid))[:N]
        rows.append([data.NoiseProfile(grid[i], grid[i], int(rng.integers(2**31))) for i in levels])
    return rows


def write_selection(selection, scores, out_dir):
    """``selection.csv`` (segment, provider, score) plus ``selection.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = scores.scores if isinstance(scores, ScoreTable) else np.asarray(scores)
    with open(out / "selection.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment", "provider", "score"])
        for k, n in enumerate(selection.choices):
            w.writerow([k, int(n), f"{s[k, n]:.9g}"])
    payload = {"matrix": selection.a.tolist(), "scores": [[float(f"{v:.9g}") for v in row] for row in s]}
    (out / "selection.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return [out / "selection.csv", out / "selection.json"]

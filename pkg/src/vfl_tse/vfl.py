"""Split-model training between a label owner (MA) and K providers (MPs).

Each MP runs a bottom net on its own segment features and sends only the
embedding to the MA. The MA concatenates embeddings by segment id, runs the
top net, computes the loss and returns one gradient block per MP. A
centralized twin runs the same arithmetic on the composed network, which is
what the equivalence tests compare against.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data, nn
from .errors import ConfigError, DimensionError, ProtocolError, TrainingError

STATE_NAMES = ("flow", "density")


@dataclass
class VflConfig:
    embed_dim: int = 16
    bottom_hidden: int = 32
    top_hidden: int = 64
    lr: float = 3e-4
    batch_size: int = 16
    epochs: int = 50
    train_fraction: float = 0.8
    seed: int = 0
    standardize: bool = True  # each party z-scores its own data with training-split statistics

    def __post_init__(self):
        if min(self.embed_dim, self.bottom_hidden, self.top_hidden, self.batch_size, self.epochs) < 1:
            raise ConfigError("widths, batch_size and epochs must be ≥ 1")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must be in (0, 1)")

    def digest(self):
        return hashlib.sha256(json.dumps(self.__dict__, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class MpParty:
    segment: int
    net: nn.DenseNet
    features: np.ndarray  # [T, tau_in, |K_k|, s], never handed to the MA
    optimizer: nn.Optimizer
    shift: np.ndarray | float = 0.0
    scale: np.ndarray | float = 1.0
    tape: nn.Tape | None = None
    role: str = "mp"

    def flat(self, idx, features=None):
        x = self.features if features is None else np.asarray(features)
        if np.any(idx < 0) or np.any(idx >= len(x)):
            raise ConfigError(f"MP {self.segment}: batch indices out of range [0, {len(x)})")
        return (x[idx].reshape(len(idx), -1) - self.shift) / self.scale


@dataclass
class MaParty:
    net: nn.DenseNet
    labels: np.ndarray  # [T, tau_out, |E|, s]
    optimizer: nn.Optimizer
    segments: tuple  # segment ids in concatenation order
    embed_dim: int
    shift: np.ndarray | float = 0.0
    scale: np.ndarray | float = 1.0
    tape: nn.Tape | None = None
    raw: np.ndarray | None = None  # last top-net output, standardized units
    role: str = "ma"

    def standardized(self, y):
        return (np.asarray(y).reshape(len(y), -1) - self.shift) / self.scale


@dataclass(frozen=True)
class IntermediateBundle:
    segment: int
    z: np.ndarray
    indices: np.ndarray


@dataclass(frozen=True)
class GradientBundle:
    segment: int
    grad: np.ndarray
    indices: np.ndarray


@dataclass
class MessageLog:
    """In-process stand-in for the network: records every cross-party message."""

    records: list = field(default_factory=list)

    def send(self, sender, receiver, kind, payload):
        self.records.append((sender, receiver, kind, tuple(payload.shape)))
        return np.array(payload, copy=True)


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)  # (epoch, split, metric, state, value)
    wall_clock: float = 0.0
    config_hash: str = ""

    def add(self, epoch, split, metrics):
        for (metric, state), value in sorted(metrics.items()):
            self.rows.append((epoch, split, metric, state, value))

    def value(self, epoch, split, metric, state):
        for row in self.rows:
            if row[:4] == (epoch, split, metric, state):
                return row[4]
        raise KeyError((epoch, split, metric, state))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,split,metric,state,value\n")
            for e, split, metric, state, v in self.rows:
                fh.write(f"{e},{split},{metric},{state},{v:.9g}\n")


# ---------------------------------------------------------------- setup


def split_indices(T, train_fraction=0.8):
    """Chronological split: first ``train_fraction`` of samples train, the rest validate."""
    n_train = int(round(T * train_fraction))
    if not 0 < n_train < T:
        raise ConfigError(f"split of T={T} at {train_fraction} leaves an empty side")
    return np.arange(n_train), np.arange(n_train, T)


def batch_order(n, batch_size, seed, epoch):
    """Shared seeded shuffler; both protocols draw batches from here."""
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def _party_seeds(seed, K):
    return np.random.SeedSequence(seed).spawn(K + 1)


def column_stats(a, idx, enabled=True):
    """Per-column mean/std of ``a[idx]`` flattened; (0, 1) when disabled."""
    if not enabled:
        return 0.0, 1.0
    flat = np.asarray(a)[idx].reshape(len(idx), -1)
    sd = flat.std(axis=0)
    return flat.mean(axis=0), np.where(sd > 0, sd, 1.0)


def init_parties(features, labels, config=None, segments=None):
    """Build the MA and one MP per feature tensor with a common seed protocol."""
    cfg = VflConfig() if config is None else config
    K = len(features)
    segments = tuple(range(K)) if segments is None else tuple(segments)
    seeds = _party_seeds(cfg.seed, K)
    train_idx, _ = split_indices(len(labels), cfg.train_fraction)
    mps = []
    for k, (seg, x) in enumerate(zip(segments, features)):
        in_dim = int(np.prod(x.shape[1:]))
        net = nn.init_dense([in_dim, cfg.bottom_hidden, cfg.embed_dim], ("relu", "identity"), np.random.default_rng(seeds[k]))
        shift, scale = column_stats(x, train_idx, cfg.standardize)
        mps.append(MpParty(seg, net, np.asarray(x, dtype=np.float64), nn.Optimizer("adam", cfg.lr), shift, scale))
    out_dim = int(np.prod(labels.shape[1:]))
    top = nn.init_dense(
        [cfg.embed_dim * K, cfg.top_hidden, cfg.top_hidden, out_dim], ("relu", "relu", "identity"),
        np.random.default_rng(seeds[K]),
    )
    shift, scale = column_stats(labels, train_idx, cfg.standardize)
    ma = MaParty(top, np.asarray(labels, dtype=np.float64), nn.Optimizer("adam", cfg.lr), segments, cfg.embed_dim, shift, scale)
    return ma, mps


def selected_features(dataset, selection):
    """Feature tensor of the chosen provider per segment (``views[(k, n)]``, truth if absent)."""
    out = []
    for k, n in enumerate(selection.choices):
        out.append(dataset.views.get((k, int(n)), dataset.features[k]))
    return out


# ---------------------------------------------------------------- protocol


def mp_forward(party, indices, log=None):
    if party.role != "mp":
        raise ProtocolError("mp_forward called on a non-MP party")
    idx = np.asarray(indices)
    z, party.tape = nn.forward(party.net, party.flat(idx))
    if log is not None:
        z = log.send(f"mp{party.segment}", "ma", "embedding", z)
    return IntermediateBundle(party.segment, z, idx)


def ma_forward(ma, bundles):
    """Predictions of shape [batch, tau_out, |E|, s] from the K embeddings."""
    by_seg = {b.segment: b for b in bundles}
    for seg in ma.segments:
        if seg not in by_seg:
            raise ProtocolError(f"missing intermediate bundle from segment {seg}")
    ref = by_seg[ma.segments[0]].indices
    for seg in ma.segments:
        b = by_seg[seg]
        if not np.array_equal(b.indices, ref):
            raise ProtocolError(f"segment {seg} bundle is not aligned with the batch")
        if b.z.shape != (len(ref), ma.embed_dim):
            raise DimensionError(f"segment {seg} embedding {b.z.shape}, expected {(len(ref), ma.embed_dim)}")
    h = np.concatenate([by_seg[seg].z for seg in ma.segments], axis=1)
    ma.raw, ma.tape = nn.forward(ma.net, h)
    return (ma.raw * ma.scale + ma.shift).reshape((len(ref),) + ma.labels.shape[1:])


def compute_loss(pred, target):
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mae(pred, target):
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(target))))


def rmse(pred, target):
    return float(np.sqrt(np.mean((np.asarray(pred) - np.asarray(target)) ** 2)))


def state_metrics(pred, target):
    """MAE and RMSE per traffic state (last axis)."""
    out = {}
    for j in range(target.shape[-1]):
        name = STATE_NAMES[j] if j < len(STATE_NAMES) else f"state{j}"
        out[("mae", name)] = mae(pred[..., j], target[..., j])
        out[("rmse", name)] = rmse(pred[..., j], target[..., j])
    return out


def _mse_grad(raw, target_std):
    return 2.0 * (raw - target_std) / raw.size


def ma_backward(ma, target, log=None):
    """Step the top net on the last forward; return one gradient block per segment."""
    g = _mse_grad(ma.raw, ma.standardized(target))
    grads = nn.backward(ma.net, ma.tape, g)
    ma.net = ma.optimizer.step(ma.net, grads)
    out = []
    for j, seg in enumerate(ma.segments):
        block = grads.inputs[:, j * ma.embed_dim : (j + 1) * ma.embed_dim]
        if log is not None:
            block = log.send("ma", f"mp{seg}", "gradient", block)
        out.append(GradientBundle(seg, block, None))
    return out


def mp_backward(party, bundle, freeze=False):
    if bundle.segment != party.segment:
        raise ProtocolError(f"gradient for segment {bundle.segment} delivered to MP {party.segment}")
    grads = nn.backward(party.net, party.tape, bundle.grad)
    if freeze:
        grads = grads.scaled(0.0)
    party.net = party.optimizer.step(party.net, grads)
    party.tape = None


def vfl_step(ma, mps, idx, log=None, freeze_mps=False, workers=None):
    if workers:
        with ThreadPoolExecutor(workers) as pool:
            bundles = list(pool.map(lambda p: mp_forward(p, idx, log), mps))
    else:
        bundles = [mp_forward(p, idx, log) for p in mps]
    target = ma.labels[idx]
    ma_forward(ma, bundles)
    loss = compute_loss(ma.raw, ma.standardized(target))
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss")
    grad_by_seg = {g.segment: g for g in ma_backward(ma, target, log)}
    for p in mps:
        mp_backward(p, grad_by_seg[p.segment], freeze_mps)
    return loss


def vfl_train_epoch(ma, mps, train_idx, batch_size, seed, epoch, log=None, freeze_mps=False, workers=None):
    """One pass over ``train_idx``; returns the mean batch loss."""
    losses = []
    for b, pos in enumerate(batch_order(len(train_idx), batch_size, seed, epoch)):
        try:
            losses.append(vfl_step(ma, mps, train_idx[pos], log, freeze_mps, workers))
        except TrainingError as exc:
            raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from None
    return float(np.mean(losses))


def vfl_predict(ma, mps, indices, features=None):
    """Forward-only pass. ``features`` optionally replaces each MP's tensor (lazy evaluation)."""
    idx = np.asarray(indices)
    bundles = []
    for j, p in enumerate(mps):
        z, _ = nn.forward(p.net, p.flat(idx, None if features is None else features[j]))
        bundles.append(IntermediateBundle(p.segment, z, idx))
    return ma_forward(ma, bundles)


def train_vfl(features, labels, config=None, workers=None):
    """Initialize, train for ``config.epochs`` and report train/validation metrics per epoch."""
    cfg = VflConfig() if config is None else config
    t0 = time.perf_counter()
    ma, mps = init_parties(features, labels, cfg)
    train_idx, val_idx = split_indices(len(labels), cfg.train_fraction)
    report = TrainReport(config_hash=cfg.digest())
    for epoch in range(1, cfg.epochs + 1):
        vfl_train_epoch(ma, mps, train_idx, cfg.batch_size, cfg.seed, epoch, workers=workers)
        for split, idx in (("train", train_idx), ("val", val_idx)):
            report.add(epoch, split, state_metrics(vfl_predict(ma, mps, idx), labels[idx]))
    report.wall_clock = time.perf_counter() - t0
    return ma, mps, report


# ---------------------------------------------------------------- centralized twin


@dataclass
class ComposedNet:
    bottoms: list
    top: nn.DenseNet
    embed_dim: int
    in_stats: list  # (shift, scale) per bottom
    out_stats: tuple

    @classmethod
    def from_parties(cls, ma, mps):
        return cls([p.net for p in mps], ma.net, ma.embed_dim, [(p.shift, p.scale) for p in mps], (ma.shift, ma.scale))

    def inputs(self, features, idx):
        return [(np.asarray(f)[idx].reshape(len(idx), -1) - m) / s for f, (m, s) in zip(features, self.in_stats)]


def central_step(model, opts, xs, target):
    """One optimizer step on the composed network, all in one place.

    ``xs`` are standardized inputs and ``target`` standardized flat labels.
    """
    zs, tapes = [], []
    for net, x in zip(model.bottoms, xs):
        z, tape = nn.forward(net, x)
        zs.append(z)
        tapes.append(tape)
    y, top_tape = nn.forward(model.top, np.concatenate(zs, axis=1))
    loss = compute_loss(y, target)
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss")
    g_top = nn.backward(model.top, top_tape, _mse_grad(y, target))
    model.top = opts[-1].step(model.top, g_top)
    d = model.embed_dim
    for j, (net, tape) in enumerate(zip(model.bottoms, tapes)):
        g = nn.backward(net, tape, g_top.inputs[:, j * d : (j + 1) * d])
        model.bottoms[j] = opts[j].step(net, g)
    return loss


def centralized_train_epoch(model, opts, features, labels, train_idx, batch_size, seed, epoch):
    losses = []
    for b, pos in enumerate(batch_order(len(train_idx), batch_size, seed, epoch)):
        idx = train_idx[pos]
        m, s = model.out_stats
        target = (labels[idx].reshape(len(idx), -1) - m) / s
        try:
            losses.append(central_step(model, opts, model.inputs(features, idx), target))
        except TrainingError as exc:
            raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from None
    return float(np.mean(losses))


def init_centralized(features, labels, config=None):
    """Composed network with exactly the parameters ``init_parties`` would create."""
    cfg = VflConfig() if config is None else config
    ma, mps = init_parties(features, labels, cfg)
    opts = [nn.Optimizer("adam", cfg.lr) for _ in mps] + [nn.Optimizer("adam", cfg.lr)]
    return ComposedNet.from_parties(ma, mps), opts


def central_predict(model, features, indices):
    idx = np.asarray(indices)
    zs = [nn.forward(net, x)[0] for net, x in zip(model.bottoms, model.inputs(features, idx))]
    y, _ = nn.forward(model.top, np.concatenate(zs, axis=1))
    m, s = model.out_stats
    return y * s + m


# ---------------------------------------------------------------- lazy evaluation


def evaluate(ma, mps, indices, policies=None, history_lag=100, seed=0):
    """Per-state MAE/RMSE with each MP's view passed through its lazy policy.

    ``policies`` maps position in ``mps`` to a ``LazyPolicy``; others stay honest.
    """
    policies = policies or {}
    feats = []
    for j, p in enumerate(mps):
        pol = policies.get(j)
        if pol is None or pol.mode == "honest":
            feats.append(p.features)
            continue
        hist = data.historical_view(p.features, history_lag) if pol.mode == "historical_data" else None
        feats.append(data.apply_lazy_policy(p.features, pol, hist, seed=seed + 7919 * j))
    idx = np.asarray(indices)
    return state_metrics(vfl_predict(ma, mps, idx, feats), ma.labels[idx])


_MODE_ALIASES = {"random": "random_data", "historical": "historical_data", "honest": "honest"}


def parse_lazy_spec(text):
    """``"mp=3:random:1.0,mp=4:historical:0.5"`` -> ``{3: LazyPolicy(...), 4: ...}``."""
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        try:
            who, mode, frac = item.split(":")
            key, idx = who.split("=")
            if key != "mp":
                raise ValueError
            mode = _MODE_ALIASES.get(mode, mode)
            out[int(idx)] = data.LazyPolicy(mode, float(frac))
        except ValueError:
            raise ConfigError(f"bad lazy spec {item!r}; expected mp=<n>:<random|historical>:<fraction>") from None
    return out


# ---------------------------------------------------------------- checkpoints


def save_parties(ma, mps, directory, config=None):
    """One ``nn`` checkpoint per party plus the standardization statistics."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for p in mps:
        nn.save_checkpoint(p.net, d / f"mp_{p.segment}.json", segment=p.segment,
                           shift=np.asarray(p.shift).tolist(), scale=np.asarray(p.scale).tolist())
    nn.save_checkpoint(ma.net, d / "ma.json", segments=list(ma.segments), embed_dim=ma.embed_dim,
                       shift=np.asarray(ma.shift).tolist(), scale=np.asarray(ma.scale).tolist(),
                       config=None if config is None else config.__dict__)
    return d


def load_parties(directory, features, labels):
    """Rebuild parties around fresh data tensors; optimizers start from scratch."""
    d = Path(directory)
    top, extra = nn.load_checkpoint(d / "ma.json")
    lr = (extra.get("config") or {}).get("lr", VflConfig.lr)
    segs = tuple(extra["segments"])
    if len(segs) != len(features):
        raise ConfigError(f"checkpoint has {len(segs)} MPs, got {len(features)} feature tensors")
    ma = MaParty(top, np.asarray(labels, dtype=np.float64), nn.Optimizer("adam", lr), segs, int(extra["embed_dim"]),
                 np.asarray(extra["shift"]), np.asarray(extra["scale"]))
    mps = []
    for seg, x in zip(segs, features):
        net, ex = nn.load_checkpoint(d / f"mp_{seg}.json")
        mps.append(MpParty(seg, net, np.asarray(x, dtype=np.float64), nn.Optimizer("adam", lr),
                           np.asarray(ex["shift"]), np.asarray(ex["scale"])))
    return ma, mps

"""Neural mutual-information estimation with the Donsker-Varadhan bound.

A statistics network ``F(x, y)`` is trained by gradient ascent on

    mean_joint F - log mean_product exp(F)

where joint pairs share a time index and product pairs pair an ``x`` and a
``y`` drawn at independent indices. The trained network scores providers: a
provider whose data no longer matches the labels gets a low (possibly
negative) estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, DimensionError, TrainingError


@dataclass
class MiSampleBatch:
    joint_x: np.ndarray
    joint_y: np.ndarray
    product_x: np.ndarray
    product_y: np.ndarray
    joint_idx: np.ndarray
    product_x_idx: np.ndarray
    product_y_idx: np.ndarray

    @property
    def n(self):
        return len(self.joint_idx)

    def pair_inputs(self):
        """Stacked critic inputs: ``n`` joint rows followed by ``n`` product rows."""
        joint = np.concatenate([self.joint_x, self.joint_y], axis=1)
        product = np.concatenate([self.product_x, self.product_y], axis=1)
        return np.concatenate([joint, product], axis=0)


def flatten_series(a):
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(a.shape[0], -1) if a.ndim > 1 else a[:, None]


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_batch(x_series, y_series, n=50, seed=0):
    """Draw ``n`` joint pairs and ``n`` product-of-marginals pairs (with replacement)."""
    if n < 1:
        raise ConfigError(f"sample count n must be ≥ 1, got {n}")
    x = flatten_series(x_series)
    y = flatten_series(y_series)
    if len(x) != len(y):
        raise DimensionError(f"series lengths differ: {len(x)} vs {len(y)}")
    T = len(x)
    if T < 2:
        raise ConfigError("need at least 2 time steps to decorrelate product pairs")
    rng = _rng(seed)
    j = rng.integers(T, size=n)
    px = rng.integers(T, size=n)
    py = rng.integers(T, size=n)
    return MiSampleBatch(x[j], y[j], x[px], y[py], j, px, py)


def dv_from_scores(f_joint, f_product):
    """``mean(f_joint) - log(mean(exp(f_product)))``, max-shifted for stability."""
    if len(f_joint) == 0 or len(f_product) == 0:
        raise ConfigError("DV estimate needs a non-empty batch")
    m = np.max(f_product)
    return float(np.mean(f_joint) - (m + np.log(np.mean(np.exp(f_product - m)))))


@dataclass
class MiModel:
    net: nn.DenseNet
    x_dim: int
    y_dim: int
    split_layer: int = 1
    history: list = field(default_factory=list)  # raw DV estimate per training step
    smoothed: list = field(default_factory=list)  # EMA of the above
    best_estimate: float = float("-inf")
    best_step: int = -1

    def __post_init__(self):
        if self.net.output_dim != 1:
            raise ConfigError("statistics network must output a scalar")
        if self.net.input_dim != self.x_dim + self.y_dim:
            raise DimensionError(f"network input {self.net.input_dim} != x_dim {self.x_dim} + y_dim {self.y_dim}")
        check_split(self.net, self.split_layer)

    def training_estimate(self, window=10):
        """Mean raw DV estimate within ``window`` steps of the kept checkpoint.

        ``best_estimate`` is a maximum over noisy values and so sits above what
        the kept critic scores on fresh batches; this average does not.
        """
        if not self.history:
            return self.best_estimate
        b = max(self.best_step, 0)
        return float(np.mean(self.history[max(0, b - window) : b + window + 1]))

    def check_inputs(self, x_series, y_series):
        x, y = flatten_series(x_series), flatten_series(y_series)
        if x.shape[1] != self.x_dim or y.shape[1] != self.y_dim:
            raise DimensionError(
                f"provider/label widths ({x.shape[1]}, {y.shape[1]}) do not match the model's "
                f"({self.x_dim}, {self.y_dim})"
            )
        return x, y


def check_split(net, split_layer):
    if not 0 < split_layer < net.n_layers:
        raise ConfigError(f"split_layer must be in 1..{net.n_layers - 1}, got {split_layer}")


def statistics_net(x_dim, y_dim, hidden=64, seed=0):
    return nn.init_dense([x_dim + y_dim, hidden, hidden, 1], ("relu", "relu", "identity"), seed)


def dv_estimate(model, batch):
    out, _ = nn.forward(model.net, batch.pair_inputs())
    return dv_from_scores(out[: batch.n, 0], out[batch.n :, 0])


def train_mi(x_series, y_series, steps=300, lr=1e-2, n=50, seed=0, hidden=64, ema_decay=0.9, split_layer=1, keep="best"):
    """Adam ascent on the DV bound with a fresh batch per step.

    The returned model carries the parameters at which the EMA-smoothed
    estimate peaked, so a longer run with the same seed can only raise
    ``best_estimate``.
    """
    if steps < 1 or lr <= 0 or n < 1:
        raise ConfigError("steps, lr and n must be positive")
    if keep not in ("best", "last"):
        raise ConfigError(f"keep must be 'best' or 'last', got {keep!r}")
    x, y = flatten_series(x_series), flatten_series(y_series)
    if len(x) != len(y):
        raise DimensionError(f"series lengths differ: {len(x)} vs {len(y)}")
    rng = np.random.default_rng(seed)
    net = statistics_net(x.shape[1], y.shape[1], hidden, rng)
    opt = nn.Optimizer("adam", lr)
    history, smoothed = [], []
    best, best_step, best_net = float("-inf"), -1, net
    ema = 0.0
    for step in range(steps):
        batch = sample_batch(x, y, n, rng)
        out, tape = nn.forward(net, batch.pair_inputs())
        f_joint, f_prod = out[:n, 0], out[n:, 0]
        est = dv_from_scores(f_joint, f_prod)
        if not np.isfinite(est):
            raise TrainingError(f"MI training diverged at step {step}")
        ema = est if step == 0 else ema_decay * ema + (1.0 - ema_decay) * est
        history.append(est)
        smoothed.append(ema)
        if ema > best:
            best, best_step, best_net = ema, step, net
        w = np.exp(f_prod - f_prod.max())
        upstream = np.concatenate([np.full(n, -1.0 / n), w / w.sum()])[:, None]
        net = opt.step(net, nn.backward(net, tape, upstream))
    if keep == "last":
        best_net = net
    return MiModel(best_net, x.shape[1], y.shape[1], split_layer, history, smoothed, best, best_step)


def score_provider(model, provider_view, labels, n=50, seed=0):
    """DV estimate of ``I(provider; labels)`` under the trained critic."""
    x, y = model.check_inputs(provider_view, labels)
    return dv_estimate(model, sample_batch(x, y, n, seed))


def split_inference(model, provider_view, labels, n=50, seed=0, split_layer=None):
    """Score with the critic cut in two: bottom provider-side, top MA-side.

    Only the bottom activations cross the boundary. The result equals
    ``score_provider`` with the same arguments bit for bit.
    """
    split = model.split_layer if split_layer is None else split_layer
    check_split(model.net, split)
    x, y = model.check_inputs(provider_view, labels)
    batch = sample_batch(x, y, n, seed)
    bottom = model.net.layers(0, split)
    top = model.net.layers(split)
    boundary, _ = nn.forward(bottom, batch.pair_inputs())  # provider side
    message = np.array(boundary, copy=True)
    out, _ = nn.forward(top, message)  # MA side
    return dv_from_scores(out[: batch.n, 0], out[batch.n :, 0])


def save_mi_model(model, path):
    nn.save_checkpoint(
        model.net, path, split_layer=model.split_layer, x_dim=model.x_dim, y_dim=model.y_dim,
        best_estimate=model.best_estimate, best_step=model.best_step,
    )


def load_mi_model(path):
    net, extra = nn.load_checkpoint(path)
    return MiModel(
        net, int(extra["x_dim"]), int(extra["y_dim"]), int(extra.get("split_layer", 1)),
        best_estimate=float(extra.get("best_estimate", float("-inf"))), best_step=int(extra.get("best_step", -1)),
    )

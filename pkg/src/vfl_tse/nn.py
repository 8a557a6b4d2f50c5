"""Small dense networks with explicit forward/backward passes.

Everything is float64 numpy. Inputs are row batches of shape ``[batch, dim]``
and a layer computes ``act(x @ W + b)`` with ``W`` of shape ``[in, out]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, StaleTapeError

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True, eq=False)
class DenseNet:
    weights: tuple
    biases: tuple
    activations: tuple

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ConfigError("weights, biases and activations must have equal length")
        if not self.weights:
            raise ConfigError("a network needs at least one layer")
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ConfigError(f"layer {i}: unknown activation {act!r}")
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise DimensionError(
                    f"layer {i}: input dim {w.shape[0]} does not chain with "
                    f"previous output dim {self.weights[i - 1].shape[1]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericError(f"layer {i}: non-finite parameters")

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def output_dim(self):
        return self.weights[-1].shape[1]

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def dims(self):
        return [self.input_dim] + [w.shape[1] for w in self.weights]

    def layers(self, start=0, stop=None):
        """Sub-network made of layers ``start:stop`` (shares parameter arrays)."""
        stop = self.n_layers if stop is None else stop
        if not 0 <= start < stop <= self.n_layers:
            raise ConfigError(f"invalid layer range {start}:{stop} for {self.n_layers} layers")
        return DenseNet(self.weights[start:stop], self.biases[start:stop], self.activations[start:stop])

    def parameters(self):
        """Flat list ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_parameters(self, params):
        params = list(params)
        return DenseNet(tuple(params[0::2]), tuple(params[1::2]), self.activations)

    def copy(self):
        return self.with_parameters(p.copy() for p in self.parameters())

    def equals(self, other):
        return (
            self.activations == other.activations
            and all(np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters()))
        )

    def to_dict(self):
        return {
            "dims": self.dims,
            "activations": list(self.activations),
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data):
        dims = data["dims"]
        weights, biases = [], []
        for i, (flat, bias) in enumerate(zip(data["weights"], data["biases"])):
            w = np.asarray(flat, dtype=np.float64)
            if w.size != dims[i] * dims[i + 1]:
                raise DimensionError(f"layer {i}: expected {dims[i] * dims[i + 1]} weights, got {w.size}")
            weights.append(w.reshape(dims[i], dims[i + 1]))
            biases.append(np.asarray(bias, dtype=np.float64))
        return cls(tuple(weights), tuple(biases), tuple(data["activations"]))


def init_dense(dims, activations, seed=0):
    """Glorot-uniform weights, zero biases, from a seeded generator."""
    if len(activations) != len(dims) - 1:
        raise ConfigError(f"{len(dims) - 1} layers need {len(dims) - 1} activations, got {len(activations)}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return DenseNet(tuple(weights), tuple(biases), tuple(activations))


def save_checkpoint(net, path, **extra):
    payload = net.to_dict()
    payload.update(extra)
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path):
    """Returns ``(net, extra_fields)``."""
    data = json.loads(Path(path).read_text())
    net = DenseNet.from_dict(data)
    extra = {k: v for k, v in data.items() if k not in ("dims", "activations", "weights", "biases")}
    return net, extra


@dataclass
class Tape:
    net: DenseNet
    inputs: list  # input to each layer
    preacts: list  # x @ W + b for each layer


@dataclass
class Gradients:
    weights: list
    biases: list
    inputs: np.ndarray

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def scaled(self, factor):
        return Gradients([w * factor for w in self.weights], [b * factor for b in self.biases], self.inputs * factor)


def forward(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimensionError(f"input of shape {x.shape} does not match network input [batch, {net.input_dim}]")
    inputs, preacts = [], []
    h = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        inputs.append(h)
        z = h @ w + b
        preacts.append(z)
        h = np.maximum(z, 0.0) if act == "relu" else z
    return h, Tape(net, inputs, preacts)


def backward(net, tape, upstream):
    if tape.net is not net:
        raise StaleTapeError("tape was recorded on a different network")
    g = np.asarray(upstream, dtype=np.float64)
    expected = (tape.inputs[0].shape[0], net.output_dim)
    if g.shape != expected:
        raise DimensionError(f"upstream gradient {g.shape} does not match output {expected}")
    dw = [None] * net.n_layers
    db = [None] * net.n_layers
    for i in reversed(range(net.n_layers)):
        if net.activations[i] == "relu":
            g = g * (tape.preacts[i] > 0.0)
        dw[i] = tape.inputs[i].T @ g
        db[i] = g.sum(axis=0)
        g = g @ net.weights[i].T
    return Gradients(dw, db, g)


@dataclass
class Optimizer:
    """SGD or bias-corrected Adam over a flat parameter list."""

    kind: str = "adam"
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.kind!r}; expected 'sgd' or 'adam'")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")

    def step(self, net, grads):
        params = net.parameters()
        gs = grads.parameters()
        if len(gs) != len(params):
            raise DimensionError(f"{len(gs)} gradient tensors for {len(params)} parameters")
        for j, (p, g) in enumerate(zip(params, gs)):
            if g.shape != p.shape:
                raise DimensionError(f"layer {j // 2}: gradient {g.shape} vs parameter {p.shape}")
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient in layer {j // 2}")
        lr = self.learning_rate
        if self.kind == "sgd":
            return net.with_parameters(p - lr * g for p, g in zip(params, gs))
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        new = []
        for j, (p, g) in enumerate(zip(params, gs)):
            self.m[j] = self.beta1 * self.m[j] + (1.0 - self.beta1) * g
            self.v[j] = self.beta2 * self.v[j] + (1.0 - self.beta2) * g * g
            m_hat = self.m[j] / c1
            v_hat = self.v[j] / c2
            new.append(p - lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return net.with_parameters(new)

"""Dense ReLU network with explicit forward/backward and SGD with momentum.

Everything is float64. Parameters are stored as ``weights[k]`` with shape
``(out, in)`` and ``biases[k]`` with shape ``(out,)``; ``Model.params()``
flattens them to ``[W0, b0, W1, b1, ...]``, which is also the layout of the
gradient lists returned by :func:`backward`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from feded.errors import ConfigError, ShapeError, UsageError

DTYPE = np.float64


@dataclass
class Model:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ShapeError("model needs one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {k}: weight {w.shape} does not match bias {b.shape}")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(
                    f"layer {k} expects input width {w.shape[1]}, "
                    f"previous layer emits {self.weights[k - 1].shape[0]}"
                )

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Model":
        return Model([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    @classmethod
    def from_params(cls, params: list[np.ndarray]) -> "Model":
        if len(params) % 2:
            raise ShapeError("parameter list must alternate weights and biases")
        return cls([np.asarray(p, dtype=DTYPE) for p in params[0::2]],
                   [np.asarray(p, dtype=DTYPE) for p in params[1::2]])


@dataclass
class OptimizerState:
    buffers: list[np.ndarray]
    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")

    @classmethod
    def for_model(cls, model: Model, learning_rate: float, momentum: float = 0.0,
                  weight_decay: float = 0.0) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in model.params()], learning_rate, momentum, weight_decay)


@dataclass
class Cache:
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer
    pre: list[np.ndarray] = field(default_factory=list)  # pre-activation of each hidden layer


def init_model(layer_widths, seed: int = 0) -> Model:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    widths = [int(w) for w in layer_widths]
    if len(widths) < 2:
        raise ConfigError(f"layer_widths needs at least input and output width, got {widths}")
    if any(w < 1 for w in widths):
        raise ConfigError(f"layer widths must be positive, got {widths}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(DTYPE))
        biases.append(np.zeros(fan_out, dtype=DTYPE))
    return Model(weights, biases)


def forward(model: Model, features) -> tuple[np.ndarray, Cache]:
    x = np.asarray(features, dtype=DTYPE)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"features of shape {x.shape} do not match input width {model.input_dim}")
    cache = Cache()
    h = x
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        cache.inputs.append(h)
        z = h @ w.T + b
        if k < last:
            cache.pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    return h, cache


def backward(model: Model, cache: Cache | None, dlogits) -> list[np.ndarray]:
    """Propagate ``dlogits`` back to parameter gradients.

    No batch averaging happens here; the loss that produced ``dlogits`` owns
    the 1/B factor.
    """
    if cache is None or not cache.inputs:
        raise UsageError("backward needs the cache returned by forward")
    g = np.asarray(dlogits, dtype=DTYPE)
    batch = cache.inputs[0].shape[0]
    if g.shape != (batch, model.num_classes):
        raise ShapeError(f"dlogits shape {g.shape} != forward output {(batch, model.num_classes)}")
    grads: list[np.ndarray] = [None] * (2 * len(model.weights))
    for k in range(len(model.weights) - 1, -1, -1):
        grads[2 * k] = g.T @ cache.inputs[k]
        grads[2 * k + 1] = g.sum(axis=0)
        if k > 0:
            g = (g @ model.weights[k]) * (cache.pre[k - 1] > 0)
    return grads


def sgd_step(model: Model, grads: list[np.ndarray], state: OptimizerState) -> tuple[Model, OptimizerState]:
    """In-place update: buf = m*buf + g + wd*p; p -= lr*buf."""
    params = model.params()
    if len(grads) != len(params) or len(state.buffers) != len(params):
        raise ShapeError("gradient/buffer count does not match model parameters")
    for p, g, buf in zip(params, grads, state.buffers):
        if g.shape != p.shape or buf.shape != p.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, buffer {buf.shape}")
        buf *= state.momentum
        buf += g
        if state.weight_decay:
            buf += state.weight_decay * p
        p -= state.learning_rate * buf
    return model, state


def logsumexp(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=DTYPE)
    if v.size == 0 or v.shape[axis] == 0:
        raise UsageError("logsumexp of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=DTYPE)
    if v.size == 0 or v.shape[axis] == 0:
        raise UsageError("softmax of an empty vector")
    e = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)

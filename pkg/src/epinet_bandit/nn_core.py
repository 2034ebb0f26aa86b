"""Minimal dense feed-forward machinery with hand-derived gradients.

All arrays are 2-D float64, row-major, batch-first: inputs are
``(batch, features)``, weights ``(fan_in, fan_out)``, biases ``(1, fan_out)``.
Gradients are accumulated into a :class:`ParameterStore` so several loss
terms can contribute before one optimizer step.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericalError, StateError

__all__ = [
    "ParameterStore",
    "DenseNet",
    "glorot_init",
    "bce_with_logit",
    "sigmoid",
    "sgd_step",
    "AdamState",
    "adam_step",
]


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def glorot_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Glorot-uniform weight matrix on [-sqrt(6/(fan_in+fan_out)), +...]."""
    if fan_in < 1 or fan_out < 1:
        raise ConfigError(f"glorot_init needs positive fans, got ({fan_in}, {fan_out})")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def bce_with_logit(label, logit):
    """Binary cross entropy of a logit, with its derivative.

    Returns ``(loss, dloss_dlogit)`` where
    ``loss = max(logit, 0) - logit*label + log(1 + exp(-|logit|))`` and
    ``dloss_dlogit = sigmoid(logit) - label``. Stable for |logit| up to 1e3
    and beyond. Accepts scalars or same-shaped arrays.
    """
    label = np.asarray(label, dtype=np.float64)
    logit = np.asarray(logit, dtype=np.float64)
    loss = np.maximum(logit, 0.0) - logit * label + np.log1p(np.exp(-np.abs(logit)))
    grad = sigmoid(logit) - label
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


class ParameterStore:
    """Ordered map of named parameter tensors with parallel gradient buffers."""

    def __init__(self):
        self.entries: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.entries:
            raise ConfigError(f"duplicate parameter name {name!r}")
        arr = np.ascontiguousarray(value, dtype=np.float64)
        if arr.ndim != 2:
            raise ConfigError(f"parameter {name!r} must be 2-D, got shape {arr.shape}")
        self.entries[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def names(self) -> list[str]:
        return list(self.entries)

    def num_params(self) -> int:
        return sum(v.size for v in self.entries.values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.entries.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self.entries):
            missing = set(self.entries) - set(values)
            extra = set(values) - set(self.entries)
            raise ConfigError(f"parameter name mismatch: missing={missing} extra={extra}")
        for k, v in values.items():
            if v.shape != self.entries[k].shape:
                raise ConfigError(
                    f"shape mismatch for {k!r}: {v.shape} vs {self.entries[k].shape}"
                )
            self.entries[k][...] = v


def sgd_step(params: ParameterStore, learning_rate: float) -> None:
    """One plain gradient step; zeroes the gradient buffers afterwards.

    Aborts with the offending parameter's name if any gradient entry is
    non-finite, before touching any value.
    """
    for name, g in params.grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter {name!r}")
    for name, v in params.entries.items():
        v -= learning_rate * params.grads[name]
    params.zero_grads()


class AdamState:
    """First/second moment buffers for Adam, keyed by parameter name."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params: ParameterStore, state: AdamState, learning_rate: float) -> None:
    """One Adam step (bias-corrected); zeroes gradients afterwards."""
    for name, g in params.grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for name, val in params.entries.items():
        g = params.grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(val)
            state.v[name] = np.zeros_like(val)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        val -= learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    params.zero_grads()


class DenseNet:
    """Fully connected net: ReLU on hidden layers, identity output.

    ``layer_dims`` lists input, hidden..., output sizes; weights get Glorot
    initialization, biases start at zero. ``forward`` caches per-layer
    inputs and pre-activations so ``backward`` can accumulate parameter
    gradients and return the gradient with respect to the input batch.
    """

    def __init__(self, layer_dims: list[int], rng: np.random.Generator,
                 name: str = "net"):
        if len(layer_dims) < 2:
            raise ConfigError(f"need at least input and output dims, got {layer_dims}")
        if any(d < 1 for d in layer_dims):
            raise ConfigError(f"all layer dims must be >= 1, got {layer_dims}")
        self.layer_dims = list(layer_dims)
        self.name = name
        self.params = ParameterStore()
        for i, (fi, fo) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
            self.params.add(f"w{i}", glorot_init(rng, fi, fo))
            self.params.add(f"b{i}", np.zeros((1, fo)))
        self._cache: tuple[list[np.ndarray], list[np.ndarray]] | None = None

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ConfigError(
                f"{self.name}: input shape {x.shape} incompatible with dim {self.input_dim}"
            )
        inputs = []   # a_i: input to layer i
        preacts = []  # z_i: pre-activation of layer i
        a = x
        n = self.num_layers
        for i in range(n):
            inputs.append(a)
            z = a @ self.params.entries[f"w{i}"] + self.params.entries[f"b{i}"]
            preacts.append(z)
            a = np.maximum(z, 0.0) if i < n - 1 else z
        self._cache = (inputs, preacts)
        return a

    def backward(self, upstream_grad: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError(f"{self.name}: backward called before forward")
        inputs, preacts = self._cache
        g = np.asarray(upstream_grad, dtype=np.float64)
        if g.shape != (inputs[0].shape[0], self.output_dim):
            raise ConfigError(
                f"{self.name}: upstream grad shape {g.shape} does not match output "
                f"({inputs[0].shape[0]}, {self.output_dim})"
            )
        n = self.num_layers
        for i in range(n - 1, -1, -1):
            dz = g if i == n - 1 else g * (preacts[i] > 0.0)
            self.params.grads[f"w{i}"] += inputs[i].T @ dz
            self.params.grads[f"b{i}"] += dz.sum(axis=0, keepdims=True)
            g = dz @ self.params.entries[f"w{i}"].T
        return g

"""Epistemic neural networks: scalar-output nets conditioned on an index.

An epistemic net maps ``(input batch, epistemic index)`` to one logit per
row; drawing the index from the net's reference distribution and holding
it fixed yields one hypothesis from the represented distribution. Four
variants are provided:

- ``point_estimate``: ignores the index entirely.
- ``mc_dropout``: multiplies the input by a binary mask index.
- ``deep_ensemble``: the index picks one particle network.
- ``epinet``: additive head ``base(x) + mlp([x,z])^T z + prior_scale *
  prior_mlp([x,z])^T z`` with the prior network frozen at construction.

All variants treat the input ``x`` as a constant during backward: the
gradient with respect to ``x`` is reported as zero, so upstream producers
of ``x`` never receive gradient through this head.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, ConfigError, StateError
from .nn_core import DenseNet, ParameterStore, sigmoid
from .rng import SeedStream

__all__ = [
    "ReferenceDistribution",
    "EpistemicIndex",
    "EpistemicNet",
    "PointEstimateENN",
    "McDropoutENN",
    "DeepEnsembleENN",
    "EpinetENN",
    "build_point_estimate",
    "build_mc_dropout",
    "build_deep_ensemble",
    "build_epinet",
    "marginal_prediction",
    "load_enn",
]

GAUSSIAN = "gaussian"
BINARY_MASK = "uniform_binary_mask"
DISCRETE = "uniform_discrete"


@dataclass(frozen=True)
class EpistemicIndex:
    """One draw from a reference distribution.

    ``payload`` is a float vector (gaussian: length d_z, possibly a
    ``(batch, d_z)`` matrix for per-example indices; mask: length d) or an
    integer particle id in [1, N].
    """

    kind: str
    payload: object


class ReferenceDistribution:
    """The distribution the epistemic index is drawn from."""

    def __init__(self, kind: str, dim: int):
        if kind not in (GAUSSIAN, BINARY_MASK, DISCRETE):
            raise ConfigError(f"unknown reference distribution kind {kind!r}")
        if dim < 1:
            raise ConfigError(f"reference distribution dim must be >= 1, got {dim}")
        self.kind = kind
        self.dim = dim  # d_z, mask length, or ensemble size

    def sample(self, rng: np.random.Generator, batch: int | None = None) -> EpistemicIndex:
        """Draw one index; ``batch`` asks for per-example gaussian draws."""
        if self.kind == GAUSSIAN:
            if batch is None:
                return EpistemicIndex(GAUSSIAN, rng.standard_normal(self.dim))
            return EpistemicIndex(GAUSSIAN, rng.standard_normal((batch, self.dim)))
        if self.kind == BINARY_MASK:
            return EpistemicIndex(BINARY_MASK, rng.integers(0, 2, size=self.dim).astype(np.float64))
        return EpistemicIndex(DISCRETE, int(rng.integers(1, self.dim + 1)))

    def zero_index(self) -> EpistemicIndex:
        """The anchor index: zero vector / all-ones mask / first particle."""
        if self.kind == GAUSSIAN:
            return EpistemicIndex(GAUSSIAN, np.zeros(self.dim))
        if self.kind == BINARY_MASK:
            return EpistemicIndex(BINARY_MASK, np.ones(self.dim))
        return EpistemicIndex(DISCRETE, 1)


class EpistemicNet:
    """Common interface; concrete variants subclass this."""

    variant: str
    reference: ReferenceDistribution
    input_dim: int

    def forward(self, x: np.ndarray, z: EpistemicIndex) -> np.ndarray:
        raise NotImplementedError

    def backward(self, upstream_grad: np.ndarray) -> np.ndarray:
        """Accumulate grads into trainable nets; return zero input-grad."""
        raise NotImplementedError

    def trainable_stores(self) -> list[tuple[str, ParameterStore]]:
        raise NotImplementedError

    def all_tensors(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def _meta(self) -> dict:
        raise NotImplementedError

    def zero_grads(self) -> None:
        for _, store in self.trainable_stores():
            store.zero_grads()

    def _check_index(self, z: EpistemicIndex) -> None:
        if z.kind != self.reference.kind:
            raise ConfigError(
                f"index kind {z.kind!r} does not match variant {self.variant!r} "
                f"reference {self.reference.kind!r}"
            )

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.all_tensors(), self._meta())


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


class PointEstimateENN(EpistemicNet):
    variant = "point_estimate"

    def __init__(self, base: DenseNet, reference: ReferenceDistribution | None = None):
        if base.output_dim != 1:
            raise ConfigError("point estimate base net must have scalar output")
        self.base = base
        self.input_dim = base.input_dim
        # any reference works: the output is constant in z
        self.reference = reference or ReferenceDistribution(GAUSSIAN, 1)

    def forward(self, x, z=None):
        x = _as_batch(x)
        return self.base.forward(x)[:, 0]

    def backward(self, upstream_grad):
        g = np.asarray(upstream_grad, dtype=np.float64).reshape(-1, 1)
        self.base.backward(g)
        return np.zeros((g.shape[0], self.input_dim))

    def trainable_stores(self):
        return [("base", self.base.params)]

    def all_tensors(self):
        return {f"base/{k}": v for k, v in self.base.params.entries.items()}

    def _meta(self):
        return {"variant": self.variant, "base_dims": self.base.layer_dims}


class McDropoutENN(EpistemicNet):
    variant = "mc_dropout"

    def __init__(self, base: DenseNet):
        if base.output_dim != 1:
            raise ConfigError("mc dropout base net must have scalar output")
        self.base = base
        self.input_dim = base.input_dim
        self.reference = ReferenceDistribution(BINARY_MASK, base.input_dim)

    def forward(self, x, z):
        self._check_index(z)
        x = _as_batch(x)
        mask = np.asarray(z.payload, dtype=np.float64)
        if mask.shape != (self.input_dim,):
            raise ConfigError(f"mask shape {mask.shape} != ({self.input_dim},)")
        return self.base.forward(x * mask)[:, 0]

    def backward(self, upstream_grad):
        g = np.asarray(upstream_grad, dtype=np.float64).reshape(-1, 1)
        self.base.backward(g)
        return np.zeros((g.shape[0], self.input_dim))

    def trainable_stores(self):
        return [("base", self.base.params)]

    def all_tensors(self):
        return {f"base/{k}": v for k, v in self.base.params.entries.items()}

    def _meta(self):
        return {"variant": self.variant, "base_dims": self.base.layer_dims}


class DeepEnsembleENN(EpistemicNet):
    variant = "deep_ensemble"

    def __init__(self, particles: list[DenseNet]):
        if not particles:
            raise ConfigError("ensemble needs at least one particle")
        dims = particles[0].layer_dims
        if any(p.layer_dims != dims for p in particles):
            raise ConfigError("all ensemble particles must share an architecture")
        if particles[0].output_dim != 1:
            raise ConfigError("ensemble particles must have scalar output")
        self.particles = particles
        self.input_dim = particles[0].input_dim
        self.reference = ReferenceDistribution(DISCRETE, len(particles))
        self._active: int | None = None

    def forward(self, x, z):
        self._check_index(z)
        pid = int(z.payload)
        if not 1 <= pid <= len(self.particles):
            raise ConfigError(f"particle id {pid} outside [1, {len(self.particles)}]")
        x = _as_batch(x)
        self._active = pid - 1
        return self.particles[self._active].forward(x)[:, 0]

    def backward(self, upstream_grad):
        if self._active is None:
            raise StateError("ensemble backward called before forward")
        g = np.asarray(upstream_grad, dtype=np.float64).reshape(-1, 1)
        self.particles[self._active].backward(g)
        return np.zeros((g.shape[0], self.input_dim))

    def trainable_stores(self):
        return [(f"particle{i}", p.params) for i, p in enumerate(self.particles)]

    def all_tensors(self):
        out = {}
        for i, p in enumerate(self.particles):
            for k, v in p.params.entries.items():
                out[f"particle{i}/{k}"] = v
        return out

    def _meta(self):
        return {
            "variant": self.variant,
            "base_dims": self.particles[0].layer_dims,
            "n_particles": len(self.particles),
        }


class EpinetENN(EpistemicNet):
    """Additive epinet head with a frozen prior network.

    The learnable and prior nets both map ``[x, z]`` to a d_z-vector that
    is dotted with ``z``, so their contribution vanishes exactly at the
    zero index. The prior net's parameters never change after
    construction; ``prior_hash()`` exposes that as a checkable digest.
    """

    variant = "epinet"

    def __init__(self, base_mlp: DenseNet, learnable_net: DenseNet,
                 prior_net: DenseNet, prior_scale: float, index_dim: int):
        if base_mlp.output_dim != 1:
            raise ConfigError("epinet base mlp must have scalar output")
        if learnable_net.layer_dims != prior_net.layer_dims:
            raise ConfigError("learnable and prior nets must share an architecture")
        if learnable_net.input_dim != base_mlp.input_dim + index_dim:
            raise ConfigError(
                f"learnable net input dim {learnable_net.input_dim} != "
                f"{base_mlp.input_dim} + {index_dim}"
            )
        if learnable_net.output_dim != index_dim:
            raise ConfigError("learnable net must output an index_dim vector")
        if prior_scale < 0:
            raise ConfigError("prior_scale must be >= 0")
        self.base_mlp = base_mlp
        self.learnable_net = learnable_net
        self.prior_net = prior_net
        self.prior_scale = float(prior_scale)
        self.index_dim = index_dim
        self.input_dim = base_mlp.input_dim
        self.reference = ReferenceDistribution(GAUSSIAN, index_dim)
        self._cached_z: np.ndarray | None = None

    def _broadcast_index(self, z: EpistemicIndex, batch: int) -> np.ndarray:
        self._check_index(z)
        zv = np.asarray(z.payload, dtype=np.float64)
        if zv.ndim == 1:
            if zv.shape != (self.index_dim,):
                raise ConfigError(f"index shape {zv.shape} != ({self.index_dim},)")
            return np.broadcast_to(zv, (batch, self.index_dim))
        if zv.shape != (batch, self.index_dim):
            raise ConfigError(
                f"per-example index shape {zv.shape} != ({batch}, {self.index_dim})"
            )
        return zv

    def forward(self, x, z):
        x = _as_batch(x)
        zmat = self._broadcast_index(z, x.shape[0])
        xz = np.concatenate([x, zmat], axis=1)
        base = self.base_mlp.forward(x)[:, 0]
        learn = np.sum(self.learnable_net.forward(xz) * zmat, axis=1)
        prior = np.sum(self.prior_net.forward(xz) * zmat, axis=1)
        self._cached_z = np.array(zmat)
        return base + learn + self.prior_scale * prior

    def backward(self, upstream_grad):
        if self._cached_z is None:
            raise StateError("epinet backward called before forward")
        g = np.asarray(upstream_grad, dtype=np.float64).reshape(-1)
        z = self._cached_z
        if g.shape[0] != z.shape[0]:
            raise ConfigError(f"upstream grad length {g.shape[0]} != batch {z.shape[0]}")
        self.base_mlp.backward(g[:, None])
        # d out / d mlp-output = z, so the learnable net sees g * z upstream
        self.learnable_net.backward(g[:, None] * z)
        # prior net stays frozen: no backward call at all
        return np.zeros((g.shape[0], self.input_dim))

    def trainable_stores(self):
        return [("base", self.base_mlp.params), ("learnable", self.learnable_net.params)]

    def all_tensors(self):
        out = {f"base/{k}": v for k, v in self.base_mlp.params.entries.items()}
        out.update({f"learnable/{k}": v for k, v in self.learnable_net.params.entries.items()})
        out.update({f"prior/{k}": v for k, v in self.prior_net.params.entries.items()})
        return out

    def _meta(self):
        return {
            "variant": self.variant,
            "base_dims": self.base_mlp.layer_dims,
            "index_dims": self.learnable_net.layer_dims,
            "prior_scale": self.prior_scale,
            "index_dim": self.index_dim,
        }

    def prior_hash(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.prior_net.params.entries):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.prior_net.params.entries[k]).tobytes())
        return h.hexdigest()


def build_point_estimate(input_dim: int, hidden: list[int], stream: SeedStream) -> PointEstimateENN:
    return PointEstimateENN(DenseNet([input_dim, *hidden, 1], stream.child("base").generator(), "base"))


def build_mc_dropout(input_dim: int, hidden: list[int], stream: SeedStream) -> McDropoutENN:
    return McDropoutENN(DenseNet([input_dim, *hidden, 1], stream.child("base").generator(), "base"))


def build_deep_ensemble(input_dim: int, hidden: list[int], n_particles: int,
                        stream: SeedStream) -> DeepEnsembleENN:
    if n_particles < 1:
        raise ConfigError(f"ensemble size must be >= 1, got {n_particles}")
    particles = [
        DenseNet([input_dim, *hidden, 1], stream.child(f"particle{i}").generator(), f"particle{i}")
        for i in range(n_particles)
    ]
    return DeepEnsembleENN(particles)


def build_epinet(input_dim: int, hidden: list[int], index_dim: int,
                 prior_scale: float, stream: SeedStream,
                 index_hidden: list[int] | None = None) -> EpinetENN:
    """Fresh epinet head; the prior net gets its own init stream."""
    index_hidden = hidden if index_hidden is None else index_hidden
    base = DenseNet([input_dim, *hidden, 1], stream.child("base").generator(), "base")
    learnable = DenseNet([input_dim + index_dim, *index_hidden, index_dim],
                         stream.child("learnable").generator(), "learnable")
    prior = DenseNet([input_dim + index_dim, *index_hidden, index_dim],
                     stream.child("prior").generator(), "prior")
    return EpinetENN(base, learnable, prior, prior_scale, index_dim)


def marginal_prediction(net: EpistemicNet, x: np.ndarray, n_samples: int,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo marginal over indices, in probability space.

    Returns per-row mean and variance of ``sigmoid(net(x, z))`` across
    ``n_samples`` fresh indices.
    """
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    x = _as_batch(x)
    probs = np.empty((n_samples, x.shape[0]))
    for i in range(n_samples):
        z = net.reference.sample(rng)
        probs[i] = sigmoid(net.forward(x, z))
    return probs.mean(axis=0), probs.var(axis=0)


def load_enn(path: str | Path) -> EpistemicNet:
    """Rebuild an epistemic net from a checkpoint, bit-exactly."""
    meta, tensors = load_checkpoint(path)
    variant = meta["variant"]
    stream = SeedStream(0)  # values are overwritten below

    def _fill(net: DenseNet, prefix: str) -> None:
        net.params.load_values(
            {k: tensors[f"{prefix}/{k}"] for k in net.params.entries}
        )

    if variant == "point_estimate":
        net = PointEstimateENN(DenseNet(meta["base_dims"], stream.generator(), "base"))
        _fill(net.base, "base")
        return net
    if variant == "mc_dropout":
        net = McDropoutENN(DenseNet(meta["base_dims"], stream.generator(), "base"))
        _fill(net.base, "base")
        return net
    if variant == "deep_ensemble":
        particles = [
            DenseNet(meta["base_dims"], stream.generator(), f"particle{i}")
            for i in range(meta["n_particles"])
        ]
        net = DeepEnsembleENN(particles)
        for i, p in enumerate(particles):
            _fill(p, f"particle{i}")
        return net
    if variant == "epinet":
        base = DenseNet(meta["base_dims"], stream.generator(), "base")
        learnable = DenseNet(meta["index_dims"], stream.generator(), "learnable")
        prior = DenseNet(meta["index_dims"], stream.generator(), "prior")
        net = EpinetENN(base, learnable, prior, meta["prior_scale"], meta["index_dim"])
        _fill(base, "base")
        _fill(learnable, "learnable")
        _fill(prior, "prior")
        return net
    raise CheckpointError(f"unknown checkpoint variant {variant!r}")

"""Two-tower retrieval model with an epistemic overarch head.

The user tower maps raw user features to K task embeddings of dim d; the
item tower maps raw item features to one dim-d embedding. Dot products of
item embedding against each user embedding give K task logits (the
embedding loss path). The overarch head consumes the concatenation
``[user embeddings | item embedding | per-task elementwise products]`` of
length ``d * (2K + 1)``, under a stop gradient: head training never moves
tower parameters, tower training never flows through the head.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .enn import (
    EpistemicIndex,
    EpistemicNet,
    build_deep_ensemble,
    build_epinet,
    build_point_estimate,
)
from .env_sim import TASKS
from .errors import CheckpointError, ConfigError, NumericalError
from .nn_core import DenseNet, ParameterStore, bce_with_logit, sigmoid
from .rng import SeedStream

__all__ = [
    "TASKS",
    "ModelSpec",
    "RetrievalModel",
    "build_model",
    "load_model",
    "build_overarch_input",
    "embedding_logits",
    "overarch_input_dim",
]


def overarch_input_dim(d: int, K: int) -> int:
    return d * (2 * K + 1)


def build_overarch_input(user_emb: np.ndarray, item_emb: np.ndarray) -> np.ndarray:
    """Concatenate user embeddings, item embedding, and their products.

    ``user_emb`` is ``(d, K)`` (column k = task-k embedding), ``item_emb``
    is ``(d,)``. Output layout: K user blocks of length d, then the item
    block, then K interaction blocks ``item * user_k``.
    """
    user_emb = np.asarray(user_emb, dtype=np.float64)
    item_emb = np.asarray(item_emb, dtype=np.float64)
    if user_emb.ndim != 2 or item_emb.ndim != 1:
        raise ConfigError(
            f"expected (d, K) user and (d,) item, got {user_emb.shape} and {item_emb.shape}"
        )
    d, _K = user_emb.shape
    if item_emb.shape[0] != d:
        raise ConfigError(f"item dim {item_emb.shape[0]} != user dim {d}")
    user_flat = user_emb.T.reshape(-1)
    interaction = (user_emb * item_emb[:, None]).T.reshape(-1)
    return np.concatenate([user_flat, item_emb, interaction])


def embedding_logits(user_emb: np.ndarray, item_emb: np.ndarray) -> np.ndarray:
    """K task logits: dot of the item embedding with each user embedding."""
    user_emb = np.asarray(user_emb, dtype=np.float64)
    item_emb = np.asarray(item_emb, dtype=np.float64)
    if user_emb.shape[0] != item_emb.shape[0]:
        raise ConfigError(f"dim mismatch: user {user_emb.shape}, item {item_emb.shape}")
    return item_emb @ user_emb


@dataclass
class ModelSpec:
    """Architecture and head configuration for one model instance."""

    user_feat_dim: int = 32
    item_feat_dim: int = 33
    embed_dim: int = 16           # d
    num_tasks: int = 4            # K
    index_dim: int = 5            # d_z
    tower_hidden: list[int] = field(default_factory=lambda: [64, 64])
    head_hidden: list[int] = field(default_factory=lambda: [32, 16])
    head: str = "epinet"          # epinet | deep_ensemble | point_estimate | none
    prior_scale: float = 1.0
    n_ensemble: int = 4
    epinet_task: str = "ws"
    index_per_example: bool = False

    def __post_init__(self):
        if not 1 <= self.num_tasks <= len(TASKS):
            raise ConfigError(f"num_tasks must be in [1, {len(TASKS)}], got {self.num_tasks}")
        if self.epinet_task not in TASKS[: self.num_tasks]:
            raise ConfigError(
                f"epinet_task {self.epinet_task!r} not in {TASKS[: self.num_tasks]}"
            )
        if self.head not in ("epinet", "deep_ensemble", "point_estimate", "none"):
            raise ConfigError(f"unknown head kind {self.head!r}")

    @property
    def epinet_task_index(self) -> int:
        return TASKS.index(self.epinet_task)

    def to_dict(self) -> dict:
        return {
            "user_feat_dim": self.user_feat_dim,
            "item_feat_dim": self.item_feat_dim,
            "embed_dim": self.embed_dim,
            "num_tasks": self.num_tasks,
            "index_dim": self.index_dim,
            "tower_hidden": list(self.tower_hidden),
            "head_hidden": list(self.head_hidden),
            "head": self.head,
            "prior_scale": self.prior_scale,
            "n_ensemble": self.n_ensemble,
            "epinet_task": self.epinet_task,
            "index_per_example": self.index_per_example,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        return cls(**data)


class RetrievalModel:
    """Towers plus optional epistemic head, with training gradients."""

    def __init__(self, spec: ModelSpec, user_tower: DenseNet, item_tower: DenseNet,
                 head: EpistemicNet | None):
        self.spec = spec
        self.user_tower = user_tower
        self.item_tower = item_tower
        self.head = head
        self.d = spec.embed_dim
        self.K = spec.num_tasks

    # ---- embeddings ----

    def user_embeddings(self, user_feats: np.ndarray) -> np.ndarray:
        """(B, F_u) -> (B, d, K); column k is the task-k embedding."""
        out = self.user_tower.forward(np.atleast_2d(user_feats))
        b = out.shape[0]
        return out.reshape(b, self.K, self.d).transpose(0, 2, 1)

    def item_embeddings(self, item_feats: np.ndarray) -> np.ndarray:
        return self.item_tower.forward(np.atleast_2d(item_feats))

    def _overarch_batch(self, user_emb: np.ndarray, item_emb: np.ndarray) -> np.ndarray:
        """(B, d, K) x (B, d) -> (B, d(2K+1)), same layout as the free function."""
        b = item_emb.shape[0]
        user_flat = user_emb.transpose(0, 2, 1).reshape(b, self.K * self.d)
        inter = (user_emb * item_emb[:, :, None]).transpose(0, 2, 1).reshape(b, self.K * self.d)
        return np.concatenate([user_flat, item_emb, inter], axis=1)

    def overarch_inputs(self, user_feats: np.ndarray, item_feats: np.ndarray) -> np.ndarray:
        """Per-pair overarch inputs at the current tower parameters."""
        user_emb = self.user_embeddings(np.atleast_2d(user_feats))
        item_emb = self.item_embeddings(np.atleast_2d(item_feats))
        return self._overarch_batch(user_emb, item_emb)

    # ---- scoring ----

    def score_items(self, user_feats: np.ndarray, item_feats: np.ndarray,
                    z: EpistemicIndex) -> np.ndarray:
        """Head logits for one user against a batch of items, one shared z."""
        if self.head is None:
            raise ConfigError("model has no head; use point_scores for tower-only scoring")
        user_emb = self.user_embeddings(user_feats.reshape(1, -1))[0]      # (d, K)
        item_emb = self.item_embeddings(item_feats)                        # (N, d)
        n = item_emb.shape[0]
        x = self._overarch_batch(np.broadcast_to(user_emb, (n, self.d, self.K)), item_emb)
        return self.head.forward(x, z)

    def point_scores(self, user_feats: np.ndarray, item_feats: np.ndarray,
                     weights: np.ndarray) -> np.ndarray:
        """Tower-only greedy score: weighted sum of per-task probabilities."""
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (self.K,):
            raise ConfigError(f"weights shape {weights.shape} != ({self.K},)")
        user_emb = self.user_embeddings(user_feats.reshape(1, -1))[0]
        item_emb = self.item_embeddings(item_feats)
        logits = item_emb @ user_emb                                       # (N, K)
        return sigmoid(logits) @ weights

    # ---- training ----

    def compute_loss_and_grads(self, user_feats: np.ndarray, item_feats: np.ndarray,
                               labels: np.ndarray, z: EpistemicIndex | None,
                               accumulate: bool = True,
                               frozen_overarch_x: np.ndarray | None = None) -> dict:
        """Batch-mean loss; populates parameter gradients when ``accumulate``.

        Returns ``{"total", "embedding", "head"}`` loss values. The head
        term exists only when the model has a head and ``z`` is given; its
        gradient reaches head parameters only (stop gradient on the
        overarch input), while the embedding term reaches tower parameters
        only. ``frozen_overarch_x`` substitutes a precomputed overarch
        input for the head term; finite-difference verification uses it to
        evaluate the loss exactly as the stop gradient defines it.
        """
        user_feats = np.atleast_2d(np.asarray(user_feats, dtype=np.float64))
        item_feats = np.atleast_2d(np.asarray(item_feats, dtype=np.float64))
        labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
        b = user_feats.shape[0]
        if item_feats.shape[0] != b or labels.shape != (b, self.K):
            raise ConfigError(
                f"batch mismatch: users {user_feats.shape}, items {item_feats.shape}, "
                f"labels {labels.shape}"
            )

        user_emb = self.user_embeddings(user_feats)    # (B, d, K)
        item_emb = self.item_embeddings(item_feats)    # (B, d)
        logits = np.einsum("bd,bdk->bk", item_emb, user_emb)
        emb_losses, emb_grads = bce_with_logit(labels, logits)
        emb_loss = float(emb_losses.sum() / b)

        head_loss = 0.0
        if self.head is not None and z is not None:
            if frozen_overarch_x is not None:
                x = frozen_overarch_x
            else:
                x = self._overarch_batch(user_emb, item_emb)
            f = self.head.forward(x, z)
            y_tilde = labels[:, self.spec.epinet_task_index]
            head_losses, head_grads = bce_with_logit(y_tilde, f)
            head_loss = float(head_losses.sum() / b)

        total = emb_loss + head_loss
        if not np.isfinite(total):
            raise NumericalError(f"non-finite training loss {total}")

        if accumulate:
            g = emb_grads / b                                        # (B, K)
            d_item = np.einsum("bk,bdk->bd", g, user_emb)            # (B, d)
            d_user = np.einsum("bk,bd->bdk", g, item_emb)            # (B, d, K)
            self.item_tower.backward(d_item)
            self.user_tower.backward(
                d_user.transpose(0, 2, 1).reshape(b, self.K * self.d)
            )
            if self.head is not None and z is not None:
                self.head.backward(head_grads / b)

        return {"total": total, "embedding": emb_loss, "head": head_loss}

    def trainable_stores(self) -> list[tuple[str, ParameterStore]]:
        stores = [("user_tower", self.user_tower.params),
                  ("item_tower", self.item_tower.params)]
        if self.head is not None:
            stores.extend((f"head/{n}", s) for n, s in self.head.trainable_stores())
        return stores

    def zero_grads(self) -> None:
        for _, store in self.trainable_stores():
            store.zero_grads()

    # ---- persistence ----

    def all_tensors(self) -> dict[str, np.ndarray]:
        out = {f"user_tower/{k}": v for k, v in self.user_tower.params.entries.items()}
        out.update({f"item_tower/{k}": v for k, v in self.item_tower.params.entries.items()})
        if self.head is not None:
            out.update({f"head/{k}": v for k, v in self.head.all_tensors().items()})
        return out

    def save(self, path: str | Path, fingerprint: str = "") -> None:
        meta = {"model_spec": self.spec.to_dict(), "config_fingerprint": fingerprint}
        save_checkpoint(path, self.all_tensors(), meta)

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        mine = self.all_tensors()
        if set(tensors) != set(mine):
            raise CheckpointError(
                f"tensor names do not match model: missing {set(mine) - set(tensors)}, "
                f"extra {set(tensors) - set(mine)}"
            )
        for name, current in mine.items():
            incoming = tensors[name]
            if incoming.shape != current.shape:
                raise CheckpointError(f"shape mismatch for {name}: {incoming.shape}")
            current[...] = incoming


def build_model(spec: ModelSpec, stream: SeedStream) -> RetrievalModel:
    user_tower = DenseNet(
        [spec.user_feat_dim, *spec.tower_hidden, spec.embed_dim * spec.num_tasks],
        stream.child("user_tower").generator(), "user_tower",
    )
    item_tower = DenseNet(
        [spec.item_feat_dim, *spec.tower_hidden, spec.embed_dim],
        stream.child("item_tower").generator(), "item_tower",
    )
    x_dim = overarch_input_dim(spec.embed_dim, spec.num_tasks)
    head_stream = stream.child("head")
    if spec.head == "epinet":
        head = build_epinet(x_dim, spec.head_hidden, spec.index_dim,
                            spec.prior_scale, head_stream)
    elif spec.head == "deep_ensemble":
        head = build_deep_ensemble(x_dim, spec.head_hidden, spec.n_ensemble, head_stream)
    elif spec.head == "point_estimate":
        head = build_point_estimate(x_dim, spec.head_hidden, head_stream)
    else:
        head = None
    return RetrievalModel(spec, user_tower, item_tower, head)


def load_model(path: str | Path) -> tuple[RetrievalModel, str]:
    """Rebuild a model from a checkpoint; returns (model, config fingerprint)."""
    meta, tensors = load_checkpoint(path)
    if "model_spec" not in meta:
        raise CheckpointError(f"{path}: not a model checkpoint")
    spec = ModelSpec.from_dict(meta["model_spec"])
    model = build_model(spec, SeedStream(0))
    model.load_tensors(tensors)
    return model, meta.get("config_fingerprint", "")

"""Action-selection policies closing the bandit loop.

Four agent kinds share one chassis (model + bounded replay buffer +
seeded streams):

- ``epinet_ts``: draws one epistemic index per timestep and picks the
  top-M items under that single sample (approximate Thompson sampling).
- ``greedy_point``: tower-only model, picks top-M by a weighted sum of
  per-task probabilities.
- ``epsilon_greedy``: greedy scores, but each slot is independently
  replaced by a uniform pick with probability epsilon.
- ``ensemble_ts``: the index picks one ensemble particle per timestep.

Updates append served interactions to the buffer and periodically take
one optimizer step on a uniformly sampled minibatch.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .enn import EpistemicIndex
from .env_sim import Interaction, ItemPool, TASKS
from .errors import CheckpointError, ConfigError, SimError
from .nn_core import AdamState, adam_step, sgd_step
from .retrieval_model import ModelSpec, RetrievalModel, build_model
from .rng import SeedStream, generator_state, restore_generator

__all__ = ["AGENT_KINDS", "AgentConfig", "Agent", "build_agent", "load_agent"]

AGENT_KINDS = ("epinet_ts", "greedy_point", "epsilon_greedy", "ensemble_ts")

_HEAD_FOR_KIND = {
    "epinet_ts": "epinet",
    "greedy_point": "none",
    "epsilon_greedy": "none",
    "ensemble_ts": "deep_ensemble",
}


@dataclass
class AgentConfig:
    kind: str = "epinet_ts"
    slate_size: int = 10
    learning_rate: float = 0.01
    batch_size: int = 32
    train_every: int = 1          # 0 disables training entirely
    buffer_capacity: int = 4096
    epsilon: float = 0.1
    optimizer: str = "sgd"        # sgd | adam
    greedy_weights: tuple = (1.0, 0.0, 0.0, 0.0)

    def validate(self) -> list[str]:
        problems = []
        if self.kind not in AGENT_KINDS:
            problems.append(f"agent.kind must be one of {AGENT_KINDS}, got {self.kind!r}")
        if self.slate_size < 1:
            problems.append(f"agent.slate_size must be >= 1, got {self.slate_size}")
        if self.learning_rate < 0:
            problems.append(f"agent.learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            problems.append(f"agent.batch_size must be >= 1, got {self.batch_size}")
        if self.train_every < 0:
            problems.append(f"agent.train_every must be >= 0, got {self.train_every}")
        if self.buffer_capacity < 1:
            problems.append(f"agent.buffer_capacity must be >= 1, got {self.buffer_capacity}")
        if not 0.0 <= self.epsilon <= 1.0:
            problems.append(f"agent.epsilon must be in [0, 1], got {self.epsilon}")
        if self.optimizer not in ("sgd", "adam"):
            problems.append(f"agent.optimizer must be sgd or adam, got {self.optimizer!r}")
        if len(self.greedy_weights) != len(TASKS):
            problems.append(f"agent.greedy_weights needs {len(TASKS)} entries")
        return problems

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "slate_size": self.slate_size,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "train_every": self.train_every,
            "buffer_capacity": self.buffer_capacity,
            "epsilon": self.epsilon,
            "optimizer": self.optimizer,
            "greedy_weights": tuple(self.greedy_weights),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AgentConfig":
        data = dict(data)
        data["greedy_weights"] = tuple(data["greedy_weights"])
        return cls(**data)


def _top_m(scores: np.ndarray, ids: np.ndarray, m: int) -> list[int]:
    """Top-m ids by score, ties broken toward the lower item id."""
    order = np.lexsort((ids, -scores))
    return [int(ids[j]) for j in order[:m]]


class Agent:
    """One policy arm: model, replay buffer, and its own random streams."""

    def __init__(self, config: AgentConfig, model: RetrievalModel, stream: SeedStream):
        problems = config.validate()
        if problems:
            raise ConfigError("; ".join(problems))
        if _HEAD_FOR_KIND[config.kind] != model.spec.head:
            raise ConfigError(
                f"agent kind {config.kind!r} needs head {_HEAD_FOR_KIND[config.kind]!r}, "
                f"model has {model.spec.head!r}"
            )
        self.config = config
        self.model = model
        self.buffer: deque[Interaction] = deque(maxlen=config.buffer_capacity)
        self.step_count = 0
        self._act_gen = stream.child("act_index").generator()
        self._train_gen = stream.child("train_index").generator()
        self._sample_gen = stream.child("buffer_sample").generator()
        self._explore_gen = stream.child("explore").generator()
        self._adam: dict[str, AdamState] = {}

    # ---- acting ----

    def act(self, user_feats: np.ndarray, pool: ItemPool) -> list[int]:
        live_ids = pool.live_ids()
        m = self.config.slate_size
        if len(live_ids) < m:
            raise SimError(f"pool has {len(live_ids)} live items, need {m}")
        phi = pool.phi_matrix(live_ids)
        kind = self.config.kind

        if kind == "epinet_ts" or kind == "ensemble_ts":
            z = self.model.head.reference.sample(self._act_gen)
            scores = self.model.score_items(user_feats, phi, z)
            return _top_m(scores, live_ids, m)

        weights = np.asarray(self.config.greedy_weights, dtype=np.float64)
        scores = self.model.point_scores(user_feats, phi, weights)
        if kind == "greedy_point":
            return _top_m(scores, live_ids, m)

        # epsilon_greedy: fill slots one by one over the remaining items
        order = np.lexsort((live_ids, -scores))
        remaining = [int(j) for j in order]   # positions into live_ids, best first
        chosen: list[int] = []
        for _ in range(m):
            if self._explore_gen.random() < self.config.epsilon:
                pick = int(self._explore_gen.integers(len(remaining)))
            else:
                pick = 0
            chosen.append(int(live_ids[remaining.pop(pick)]))
        return chosen

    # ---- learning ----

    def observe_and_update(self, interactions: list[Interaction]) -> None:
        """Record one timestep's outcomes; train on the configured cadence."""
        self.buffer.extend(interactions)
        self.step_count += 1
        te = self.config.train_every
        if te == 0 or self.step_count % te != 0 or not self.buffer:
            return
        self.train_minibatch()

    def train_minibatch(self) -> dict:
        idx = self._sample_gen.integers(0, len(self.buffer), size=self.config.batch_size)
        batch = [self.buffer[int(i)] for i in idx]
        users = np.stack([it.user_feats for it in batch])
        items = np.stack([it.item_feats for it in batch])
        labels = np.stack([it.labels for it in batch])
        z = None
        if self.model.head is not None:
            per_example = self.model.spec.index_per_example
            z = self.model.head.reference.sample(
                self._train_gen, batch=len(batch) if per_example else None
            )
        losses = self.model.compute_loss_and_grads(users, items, labels, z)
        self._apply_optimizer()
        return losses

    def _apply_optimizer(self) -> None:
        lr = self.config.learning_rate
        for name, store in self.model.trainable_stores():
            if self.config.optimizer == "adam":
                state = self._adam.setdefault(name, AdamState())
                adam_step(store, state, lr)
            else:
                sgd_step(store, lr)

    # ---- persistence ----

    def save(self, path: str | Path) -> None:
        tensors = {f"model/{k}": v for k, v in self.model.all_tensors().items()}
        for store_name, state in self._adam.items():
            for pname, m in state.m.items():
                tensors[f"adam_m/{store_name}/{pname}"] = m
                tensors[f"adam_v/{store_name}/{pname}"] = state.v[pname]
        n = len(self.buffer)
        fu = self.model.spec.user_feat_dim
        fi = self.model.spec.item_feat_dim
        buf = {
            "user_feats": np.zeros((n, fu)),
            "item_feats": np.zeros((n, fi)),
            "labels": np.zeros((n, len(TASKS))),
            "scalars": np.zeros((n, 7)),
        }
        for i, it in enumerate(self.buffer):
            buf["user_feats"][i] = it.user_feats
            buf["item_feats"][i] = it.item_feats
            buf["labels"][i] = it.labels
            buf["scalars"][i] = (it.step, it.user_id, it.item_id, it.watch_seconds,
                                 it.video_length, it.completed_count,
                                 it.impressions_at_serve)
        for k, v in buf.items():
            tensors[f"buffer/{k}"] = v
        meta = {
            "agent_config": self.config.to_dict(),
            "model_spec": self.model.spec.to_dict(),
            "step_count": self.step_count,
            "adam_t": {k: v.t for k, v in self._adam.items()},
            "rng": {
                "act_index": generator_state(self._act_gen),
                "train_index": generator_state(self._train_gen),
                "buffer_sample": generator_state(self._sample_gen),
                "explore": generator_state(self._explore_gen),
            },
        }
        save_checkpoint(path, tensors, meta)


def build_agent(config: AgentConfig, model_spec: ModelSpec, stream: SeedStream) -> Agent:
    """Fresh agent; the model head is forced to match the agent kind."""
    if config.kind not in AGENT_KINDS:
        raise ConfigError(f"unknown agent kind {config.kind!r}")
    spec_dict = model_spec.to_dict()
    spec_dict["head"] = _HEAD_FOR_KIND[config.kind]
    spec = ModelSpec.from_dict(spec_dict)
    model = build_model(spec, stream.child("model"))
    return Agent(config, model, stream.child("agent"))


def load_agent(path: str | Path) -> Agent:
    """Rebuild an agent snapshot; future decisions replay bit-exactly."""
    meta, tensors = load_checkpoint(path)
    if "agent_config" not in meta:
        raise CheckpointError(f"{path}: not an agent checkpoint")
    config = AgentConfig.from_dict(meta["agent_config"])
    spec = ModelSpec.from_dict(meta["model_spec"])
    model = build_model(spec, SeedStream(0))
    model.load_tensors({
        k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")
    })
    agent = Agent(config, model, SeedStream(0))
    agent.step_count = int(meta["step_count"])
    agent._act_gen = restore_generator(meta["rng"]["act_index"])
    agent._train_gen = restore_generator(meta["rng"]["train_index"])
    agent._sample_gen = restore_generator(meta["rng"]["buffer_sample"])
    agent._explore_gen = restore_generator(meta["rng"]["explore"])
    for name, t in meta.get("adam_t", {}).items():
        state = AdamState()
        state.t = int(t)
        prefix_m = f"adam_m/{name}/"
        for k, v in tensors.items():
            if k.startswith(prefix_m):
                pname = k[len(prefix_m):]
                state.m[pname] = v.copy()
                state.v[pname] = tensors[f"adam_v/{name}/{pname}"].copy()
        agent._adam[name] = state
    scalars = tensors["buffer/scalars"]
    for i in range(scalars.shape[0]):
        step, user_id, item_id, watch, vlen, completed, at_serve = scalars[i]
        agent.buffer.append(Interaction(
            step=int(step),
            user_id=int(user_id),
            user_feats=tensors["buffer/user_feats"][i].copy(),
            item_id=int(item_id),
            item_feats=tensors["buffer/item_feats"][i].copy(),
            labels=tensors["buffer/labels"][i].copy(),
            watch_seconds=float(watch),
            video_length=float(vlen),
            completed_count=int(completed),
            impressions_at_serve=int(at_serve),
        ))
    return agent

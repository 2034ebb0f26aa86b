"""Non-stationary cold-start content simulator.

A pool of N short videos is continuously refreshed: every step the r
oldest live items retire and r fresh ones spawn, and any item that hits
the impression cap retires immediately. Each step also brings a fresh
user. Engagement comes from a hidden bilinear ground truth: user and item
carry latent vectors whose scaled inner product ("affinity") drives a
like/share Bernoulli rate and a log-normal total watch time. Agents only
ever see noisy linear projections of the latents.

Labels per served item, in fixed order ``(ws, like, share, vvs)``:

- ``ws``: watch score, a binary signal with video-length-dependent rules
  (see :func:`watch_score`).
- ``like`` / ``share``: binary engagement events.
- ``vvs``: watch-time step function in ninths (see :func:`vvs`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtr

from .errors import ConfigError, SimError
from .rng import SeedStream

__all__ = [
    "TASKS",
    "watch_score",
    "vvs",
    "EnvConfig",
    "Item",
    "ItemPool",
    "UserContext",
    "Interaction",
    "GroundTruth",
    "ColdStartEnv",
    "make_stationary_env",
    "format_interaction_line",
    "parse_interaction_line",
    "INTERACTION_LOG_FIELDS",
]

TASKS = ("ws", "like", "share", "vvs")


def watch_score(video_length: float, watch_seconds: float, completed_count: int) -> float:
    """Binary watch score.

    1 when a video shorter than 10s was completed more than once; when a
    video of 10-20s was completed; or when at least 20 seconds of a video
    of 20s or longer were watched. 0 otherwise.
    """
    if video_length < 10.0:
        return 1.0 if completed_count > 1 else 0.0
    if video_length < 20.0:
        return 1.0 if completed_count >= 1 else 0.0
    return 1.0 if watch_seconds >= 20.0 else 0.0


def vvs(watch_seconds: float) -> float:
    """Watch-time step function: 0 under 10s, k/9 on [10k, 10k+10), 1 at 90s+."""
    if watch_seconds < 10.0:
        return 0.0
    return min(int(watch_seconds // 10.0), 9) / 9.0


@dataclass
class EnvConfig:
    """Simulator parameters; defaults are the desk-scale configuration."""

    num_items: int = 500
    slate_size: int = 10
    impression_cap: int | None = 10000
    refresh_per_step: int = 2
    user_feat_dim: int = 32
    item_feat_dim: int = 33
    latent_dim: int = 8
    user_mean_scale: float = 1.5  # population taste direction vs idiosyncratic taste
    item_quality_sigma: float = 0.0  # log-normal spread of item pull strength (0 = uniform)
    feature_noise: float = 0.1
    like_coef: float = 1.5
    like_bias: float = -5.744     # calibrated so the marginal like rate is ~1%
    share_coef: float = 1.5
    share_bias: float = -7.049
    watch_mu0: float = 2.48       # ln-watch intercept: median watch ~12s at zero affinity
    watch_mu_coef: float = 0.8
    watch_sigma: float = 0.9
    video_lengths: tuple = (5, 15, 30, 60, 90, 120)
    reward_weights: tuple = (1.0, 0.0, 0.0, 0.0)

    def validate(self) -> list[str]:
        problems = []
        if self.num_items < 1:
            problems.append(f"env.num_items must be >= 1, got {self.num_items}")
        if not 1 <= self.slate_size <= self.num_items:
            problems.append(
                f"env.slate_size must be in [1, num_items], got {self.slate_size}"
            )
        if self.impression_cap is not None and self.impression_cap < 1:
            problems.append(f"env.impression_cap must be >= 1 or none, got {self.impression_cap}")
        if self.refresh_per_step < 0:
            problems.append(f"env.refresh_per_step must be >= 0, got {self.refresh_per_step}")
        if self.refresh_per_step > self.num_items:
            problems.append("env.refresh_per_step cannot exceed env.num_items")
        if self.latent_dim < 1:
            problems.append(f"env.latent_dim must be >= 1, got {self.latent_dim}")
        if self.item_feat_dim < 2:
            problems.append(f"env.item_feat_dim must be >= 2, got {self.item_feat_dim}")
        if self.user_feat_dim < 1:
            problems.append(f"env.user_feat_dim must be >= 1, got {self.user_feat_dim}")
        if self.feature_noise < 0:
            problems.append(f"env.feature_noise must be >= 0, got {self.feature_noise}")
        if self.user_mean_scale < 0:
            problems.append(f"env.user_mean_scale must be >= 0, got {self.user_mean_scale}")
        if self.item_quality_sigma < 0:
            problems.append(
                f"env.item_quality_sigma must be >= 0, got {self.item_quality_sigma}"
            )
        if self.watch_sigma <= 0:
            problems.append(f"env.watch_sigma must be > 0, got {self.watch_sigma}")
        if len(self.reward_weights) != len(TASKS):
            problems.append(f"env.reward_weights needs {len(TASKS)} entries")
        elif any(w < 0 for w in self.reward_weights):
            problems.append("env.reward_weights must be non-negative")
        if not self.video_lengths or any(v <= 0 for v in self.video_lengths):
            problems.append("env.video_lengths must be positive")
        return problems


@dataclass
class Item:
    """Read-only view of one pool entry."""

    id: int
    phi: np.ndarray
    video_length: float
    birth_step: int
    impression_count: int
    retired: bool


@dataclass
class UserContext:
    user_id: int
    psi: np.ndarray          # what agents see
    u_star: np.ndarray       # hidden preference vector


@dataclass
class Interaction:
    """One (user, served item) outcome record."""

    step: int
    user_id: int
    user_feats: np.ndarray
    item_id: int
    item_feats: np.ndarray
    labels: np.ndarray       # (ws, like, share, vvs)
    watch_seconds: float
    video_length: float
    completed_count: int
    impressions_at_serve: int


INTERACTION_LOG_FIELDS = (
    "step", "user_id", "item_id", "impressions_at_serve",
    "ws", "like", "share", "vvs",
    "watch_seconds", "video_length", "completed_count",
)


def format_interaction_line(it: Interaction) -> str:
    """Serialize one interaction as a comma-separated text record."""
    vals = [
        it.step, it.user_id, it.item_id, it.impressions_at_serve,
        repr(float(it.labels[0])), repr(float(it.labels[1])),
        repr(float(it.labels[2])), repr(float(it.labels[3])),
        repr(float(it.watch_seconds)), repr(float(it.video_length)),
        it.completed_count,
    ]
    return ",".join(str(v) for v in vals)


def parse_interaction_line(line: str) -> dict:
    parts = line.strip().split(",")
    if len(parts) != len(INTERACTION_LOG_FIELDS):
        raise ValueError(f"expected {len(INTERACTION_LOG_FIELDS)} fields, got {len(parts)}")
    rec = dict(zip(INTERACTION_LOG_FIELDS, parts))
    for key in ("step", "user_id", "item_id", "impressions_at_serve", "completed_count"):
        rec[key] = int(rec[key])
    for key in ("ws", "like", "share", "vvs", "watch_seconds", "video_length"):
        rec[key] = float(rec[key])
    return rec


class ItemPool:
    """Array-backed item storage; item id doubles as the row index."""

    def __init__(self, item_feat_dim: int, latent_dim: int, capacity: int = 1024):
        self._cap = capacity
        self._count = 0
        self._phi = np.zeros((capacity, item_feat_dim))
        self._v = np.zeros((capacity, latent_dim))
        self._length = np.zeros(capacity)
        self._birth = np.zeros(capacity, dtype=np.int64)
        self._impressions = np.zeros(capacity, dtype=np.int64)
        self._retired = np.zeros(capacity, dtype=bool)
        self._overrides: dict[int, dict] = {}
        self._live_cache: np.ndarray | None = None

    def _grow(self) -> None:
        new_cap = self._cap * 2
        for name in ("_phi", "_v"):
            buf = getattr(self, name)
            grown = np.zeros((new_cap, buf.shape[1]))
            grown[: self._cap] = buf
            setattr(self, name, grown)
        for name in ("_length", "_birth", "_impressions", "_retired"):
            buf = getattr(self, name)
            grown = np.zeros(new_cap, dtype=buf.dtype)
            grown[: self._cap] = buf
            setattr(self, name, grown)
        self._cap = new_cap

    def add(self, phi: np.ndarray, v_star: np.ndarray, video_length: float,
            birth_step: int, override: dict | None = None) -> int:
        if self._count == self._cap:
            self._grow()
        item_id = self._count
        self._phi[item_id] = phi
        self._v[item_id] = v_star
        self._length[item_id] = video_length
        self._birth[item_id] = birth_step
        if override:
            self._overrides[item_id] = dict(override)
        self._count += 1
        self._live_cache = None
        return item_id

    def retire(self, item_id: int) -> None:
        self._retired[item_id] = True
        self._live_cache = None

    def is_live(self, item_id: int) -> bool:
        return 0 <= item_id < self._count and not self._retired[item_id]

    def live_ids(self) -> np.ndarray:
        if self._live_cache is None:
            self._live_cache = np.nonzero(~self._retired[: self._count])[0]
        return self._live_cache

    @property
    def live_count(self) -> int:
        return len(self.live_ids())

    @property
    def total_created(self) -> int:
        return self._count

    def item(self, item_id: int) -> Item:
        if not 0 <= item_id < self._count:
            raise SimError(f"no such item id {item_id}")
        return Item(
            id=item_id,
            phi=self._phi[item_id].copy(),
            video_length=float(self._length[item_id]),
            birth_step=int(self._birth[item_id]),
            impression_count=int(self._impressions[item_id]),
            retired=bool(self._retired[item_id]),
        )

    def live_items(self) -> list[Item]:
        return [self.item(int(i)) for i in self.live_ids()]

    def phi_matrix(self, ids: np.ndarray) -> np.ndarray:
        return self._phi[ids]

    def v_matrix(self, ids: np.ndarray) -> np.ndarray:
        return self._v[ids]

    def lengths(self, ids: np.ndarray) -> np.ndarray:
        return self._length[ids]

    def impressions(self, ids: np.ndarray) -> np.ndarray:
        return self._impressions[ids]

    def override_for(self, item_id: int) -> dict:
        return self._overrides.get(item_id, {})


class GroundTruth:
    """Hidden engagement model mapping (user latent, item latent) to outcomes."""

    def __init__(self, config: EnvConfig, stream: SeedStream):
        self.config = config
        gen = stream.generator()
        L = config.latent_dim
        self.user_proj = gen.standard_normal((config.user_feat_dim, L)) / np.sqrt(L)
        self.item_proj = gen.standard_normal((config.item_feat_dim - 1, L)) / np.sqrt(L)
        mean_dir = gen.standard_normal(L)
        # shared taste component: items aligned with it appeal to most users
        self.user_mean = config.user_mean_scale * mean_dir / np.linalg.norm(mean_dir)
        self._length_scale = np.log(max(config.video_lengths))

    def affinity(self, u_star: np.ndarray, v_star: np.ndarray) -> np.ndarray:
        """Scaled inner product; approximately standard normal marginally."""
        return v_star @ u_star / np.sqrt(self.config.latent_dim)

    def user_features(self, u_star: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        noise = gen.standard_normal(self.config.user_feat_dim)
        return self.user_proj @ u_star + self.config.feature_noise * noise

    def item_features(self, v_star: np.ndarray, video_length: float,
                      gen: np.random.Generator) -> np.ndarray:
        noise = gen.standard_normal(self.config.item_feat_dim - 1)
        base = self.item_proj @ v_star + self.config.feature_noise * noise
        return np.concatenate([base, [np.log(video_length) / self._length_scale]])

    # ln-watch mean is clamped so extreme affinities cannot overflow exp();
    # sampling and closed-form expectations share the same clamp
    _WATCH_MU_SPAN = 12.0

    def _clamp_mu(self, mu):
        lo = self.config.watch_mu0 - self._WATCH_MU_SPAN
        hi = self.config.watch_mu0 + self._WATCH_MU_SPAN
        return np.clip(mu, lo, hi)

    def _watch_mu(self, affinity, override: dict):
        if "watch_mu" in override:
            return np.asarray(override["watch_mu"], dtype=np.float64)
        return self._clamp_mu(
            self.config.watch_mu0 + self.config.watch_mu_coef * affinity
        )

    def _like_p(self, affinity, override: dict):
        if "like_p" in override:
            return np.asarray(override["like_p"], dtype=np.float64)
        return _sigmoid(self.config.like_coef * affinity + self.config.like_bias)

    def _share_p(self, affinity, override: dict):
        if "share_p" in override:
            return np.asarray(override["share_p"], dtype=np.float64)
        return _sigmoid(self.config.share_coef * affinity + self.config.share_bias)

    def sample_outcome(self, u_star: np.ndarray, v_star: np.ndarray,
                       video_length: float, override: dict,
                       gen: np.random.Generator) -> tuple[np.ndarray, float, int]:
        """Draw one engagement outcome; returns (labels, watch_seconds, completed)."""
        aff = float(self.affinity(u_star, v_star))
        like = 1.0 if gen.random() < float(self._like_p(aff, override)) else 0.0
        share = 1.0 if gen.random() < float(self._share_p(aff, override)) else 0.0
        mu = float(self._watch_mu(aff, override))
        total_watch = float(np.exp(mu + self.config.watch_sigma * gen.standard_normal()))
        watch_seconds = min(total_watch, video_length)
        completed = int(total_watch // video_length)
        labels = np.array([
            watch_score(video_length, watch_seconds, completed),
            like,
            share,
            vvs(watch_seconds),
        ])
        return labels, watch_seconds, completed

    def expected_labels(self, u_star: np.ndarray, v_star: np.ndarray,
                        video_length: float, override: dict) -> np.ndarray:
        """Closed-form per-task expectations for one (user, item) pair."""
        aff = float(self.affinity(u_star, v_star))
        mu = float(self._watch_mu(aff, override))
        sigma = self.config.watch_sigma

        def survival(tau: float) -> float:
            # P(total watch >= tau) for log-normal total watch
            return float(ndtr((mu - np.log(tau)) / sigma))

        if video_length < 10.0:
            e_ws = survival(2.0 * video_length)
        elif video_length < 20.0:
            e_ws = survival(video_length)
        else:
            e_ws = survival(20.0)

        e_vvs = 0.0
        for k in range(1, 9):
            lo, hi = 10.0 * k, 10.0 * (k + 1)
            if video_length < lo:
                break
            p = survival(lo) - survival(hi) if video_length >= hi else survival(lo)
            e_vvs += (k / 9.0) * p
        if video_length >= 90.0:
            e_vvs += survival(90.0)

        return np.array([
            e_ws,
            float(self._like_p(aff, override)),
            float(self._share_p(aff, override)),
            e_vvs,
        ])

    def _batch_params(self, u_star: np.ndarray, v_stars: np.ndarray,
                      overrides: list[dict] | None):
        """Affinity-driven (mu, like_p, share_p) arrays with overrides applied."""
        aff = v_stars @ u_star / np.sqrt(self.config.latent_dim)
        mu = self._clamp_mu(self.config.watch_mu0 + self.config.watch_mu_coef * aff)
        like = _sigmoid(self.config.like_coef * aff + self.config.like_bias)
        share = _sigmoid(self.config.share_coef * aff + self.config.share_bias)
        if overrides:
            for i, ov in enumerate(overrides):
                if "watch_mu" in ov:
                    mu[i] = ov["watch_mu"]
                if "like_p" in ov:
                    like[i] = ov["like_p"]
                if "share_p" in ov:
                    share[i] = ov["share_p"]
        return mu, like, share

    def expected_labels_matrix(self, u_star: np.ndarray, v_stars: np.ndarray,
                               lengths: np.ndarray,
                               overrides: list[dict] | None,
                               tasks: tuple[bool, bool, bool, bool] = (True,) * 4
                               ) -> np.ndarray:
        """Vectorized :meth:`expected_labels` over a batch of items.

        ``tasks`` flags which of (ws, like, share, vvs) to compute; skipped
        tasks return zeros (the reward fast path only needs the weighted ones).
        """
        n = v_stars.shape[0]
        mu, like, share = self._batch_params(u_star, v_stars, overrides)
        sigma = self.config.watch_sigma

        def survival(tau: np.ndarray) -> np.ndarray:
            return ndtr((mu - np.log(tau)) / sigma)

        e_ws = np.zeros(n)
        if tasks[0]:
            ws_tau = np.where(lengths < 10.0, 2.0 * lengths,
                              np.where(lengths < 20.0, lengths, 20.0))
            e_ws = survival(ws_tau)

        e_vvs = np.zeros(n)
        if tasks[3]:
            for k in range(1, 9):
                lo, hi = 10.0 * k, 10.0 * (k + 1)
                reach = lengths >= lo
                full = lengths >= hi
                s_lo = survival(np.full(n, lo))
                s_hi = survival(np.full(n, hi))
                e_vvs += (k / 9.0) * np.where(reach, np.where(full, s_lo - s_hi, s_lo), 0.0)
            e_vvs += np.where(lengths >= 90.0, survival(np.full(n, 90.0)), 0.0)

        return np.stack([
            e_ws,
            like if tasks[1] else np.zeros(n),
            share if tasks[2] else np.zeros(n),
            e_vvs,
        ], axis=1)


def _sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


class ColdStartEnv:
    """The simulator: serves a fresh user each step against a rolling pool."""

    def __init__(self, config: EnvConfig, stream: SeedStream,
                 initial_overrides: list[dict] | None = None):
        problems = config.validate()
        if problems:
            raise ConfigError("; ".join(problems))
        self.config = config
        self.truth = GroundTruth(config, stream.child("projection"))
        self._item_gen = stream.child("items").generator()
        self._user_gen = stream.child("users").generator()
        self._outcome_gen = stream.child("outcomes").generator()
        self.pool = ItemPool(config.item_feat_dim, config.latent_dim)
        self.t = 0
        for i in range(config.num_items):
            ov = initial_overrides[i] if initial_overrides else None
            self._spawn_item(birth_step=0, override=ov)
        self.current_user = self._draw_user()

    def _spawn_item(self, birth_step: int, override: dict | None = None) -> int:
        gen = self._item_gen
        v_star = gen.standard_normal(self.config.latent_dim)
        qs = self.config.item_quality_sigma
        if qs > 0.0:
            # mean-one log-normal pull strength: most items weak, a few gems
            v_star = v_star * np.exp(qs * gen.standard_normal() - 0.5 * qs * qs)
        video_length = float(gen.choice(np.asarray(self.config.video_lengths, dtype=np.float64)))
        if override and "video_length" in override:
            video_length = float(override["video_length"])
        phi = self.truth.item_features(v_star, video_length, gen)
        return self.pool.add(phi, v_star, video_length, birth_step, override)

    def _draw_user(self) -> UserContext:
        u_star = self.truth.user_mean + self._user_gen.standard_normal(self.config.latent_dim)
        psi = self.truth.user_features(u_star, self._user_gen)
        return UserContext(user_id=self.t, psi=psi, u_star=u_star)

    def step(self, action_ids) -> list[Interaction]:
        """Serve the action to the current user; advance pool and user."""
        ids = [int(i) for i in action_ids]
        if len(ids) != self.config.slate_size:
            raise SimError(
                f"action has {len(ids)} items, slate size is {self.config.slate_size}"
            )
        if len(set(ids)) != len(ids):
            raise SimError(f"action contains duplicate item ids: {ids}")
        for i in ids:
            if not self.pool.is_live(i):
                raise SimError(f"item {i} is not a live pool item")

        user = self.current_user
        id_arr = np.asarray(ids, dtype=np.int64)
        lengths = self.pool._length[id_arr]
        overrides = (
            [self.pool.override_for(i) for i in ids] if self.pool._overrides else None
        )
        mu, like_p, share_p = self.truth._batch_params(
            user.u_star, self.pool._v[id_arr], overrides
        )
        gen = self._outcome_gen
        likes = (gen.random(len(ids)) < like_p).astype(np.float64)
        shares = (gen.random(len(ids)) < share_p).astype(np.float64)
        total_watch = np.exp(mu + self.config.watch_sigma * gen.standard_normal(len(ids)))
        watch = np.minimum(total_watch, lengths)
        completed = (total_watch // lengths).astype(np.int64)

        interactions = []
        for j, item_id in enumerate(ids):
            serve_count = int(self.pool._impressions[item_id])
            labels = np.array([
                watch_score(float(lengths[j]), float(watch[j]), int(completed[j])),
                likes[j],
                shares[j],
                vvs(float(watch[j])),
            ])
            interactions.append(Interaction(
                step=self.t,
                user_id=user.user_id,
                user_feats=user.psi,
                item_id=item_id,
                item_feats=self.pool._phi[item_id].copy(),
                labels=labels,
                watch_seconds=float(watch[j]),
                video_length=float(lengths[j]),
                completed_count=int(completed[j]),
                impressions_at_serve=serve_count,
            ))
            self.pool._impressions[item_id] = serve_count + 1

        self._apply_lifecycle()
        self.t += 1
        self.current_user = self._draw_user()
        return interactions

    def _apply_lifecycle(self) -> None:
        cap = self.config.impression_cap
        if cap is not None:
            live = self.pool.live_ids()
            capped = live[self.pool._impressions[live] >= cap]
            for item_id in capped:
                self.pool.retire(int(item_id))
                self._spawn_item(birth_step=self.t + 1)
        r = self.config.refresh_per_step
        if r > 0:
            live = self.pool.live_ids()
            oldest = live[np.lexsort((live, self.pool._birth[live]))][:r]
            for item_id in oldest:
                self.pool.retire(int(item_id))
                self._spawn_item(birth_step=self.t + 1)

    # ---- regret instrumentation (simulator-internal ground truth) ----

    def expected_item_rewards(self) -> tuple[np.ndarray, np.ndarray]:
        """(live ids, expected reward per live item) for the current user."""
        ids = self.pool.live_ids()
        v = self.pool.v_matrix(ids)
        lengths = self.pool.lengths(ids)
        overrides = (
            [self.pool.override_for(int(i)) for i in ids]
            if self.pool._overrides else None
        )
        w = np.asarray(self.config.reward_weights, dtype=np.float64)
        labels = self.truth.expected_labels_matrix(
            self.current_user.u_star, v, lengths, overrides,
            tasks=tuple(bool(x) for x in w != 0.0),
        )
        return ids, labels @ w

    def oracle_value(self) -> float:
        """Expected reward of the best possible slate for the current user."""
        _, rewards = self.expected_item_rewards()
        m = self.config.slate_size
        top = np.partition(rewards, len(rewards) - m)[-m:]
        return float(top.sum())

    def expected_action_value(self, action_ids) -> float:
        ids, rewards = self.expected_item_rewards()
        lookup = {int(i): r for i, r in zip(ids, rewards)}
        try:
            return float(sum(lookup[int(i)] for i in action_ids))
        except KeyError as exc:
            raise SimError(f"action references non-live item {exc}") from exc

    def realized_reward(self, interactions: list[Interaction]) -> float:
        w = np.asarray(self.config.reward_weights, dtype=np.float64)
        return float(sum(float(it.labels @ w) for it in interactions))


def make_stationary_env(like_probs, stream: SeedStream, slate_size: int = 1,
                        base: EnvConfig | None = None) -> ColdStartEnv:
    """Fixed pool with hand-set like probabilities (no refresh, no cap).

    Used by small-instance studies: reward should be pointed at the like
    task, e.g. ``reward_weights=(0, 1, 0, 0)``.
    """
    like_probs = list(like_probs)
    cfg = base or EnvConfig()
    cfg = EnvConfig(**{
        **cfg.__dict__,
        "num_items": len(like_probs),
        "slate_size": slate_size,
        "impression_cap": None,
        "refresh_per_step": 0,
        "reward_weights": (0.0, 1.0, 0.0, 0.0),
    })
    overrides = [{"like_p": float(p)} for p in like_probs]
    return ColdStartEnv(cfg, stream, initial_overrides=overrides)

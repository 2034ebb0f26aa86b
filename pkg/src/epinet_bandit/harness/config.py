"""Experiment configuration: a flat key-value text format with dotted keys.

A config file is plain text, one ``section.key = value`` per line, ``#``
comments allowed. Every key has a documented default; unknown keys are
hard errors. The canonical dump (sorted keys, normalized values) is
hashed into a fingerprint that stamps every run output.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from ..agents import AGENT_KINDS, AgentConfig
from ..env_sim import TASKS, EnvConfig
from ..errors import ConfigError
from ..retrieval_model import ModelSpec

__all__ = ["ExperimentConfig", "SCHEMA", "PRESETS"]

# key -> (type, default, help)
SCHEMA: dict[str, tuple[str, object, str]] = {
    # environment
    "env.num_items": ("int", 500, "live pool size N"),
    "env.slate_size": ("int", 10, "items proposed per step M"),
    "env.impression_cap": ("opt_int", 10000, "retire an item at this many impressions (or 'none')"),
    "env.refresh_per_step": ("int", 2, "oldest items replaced by fresh ones each step"),
    "env.user_feat_dim": ("int", 32, "raw user feature dim"),
    "env.item_feat_dim": ("int", 33, "raw item feature dim (includes video length)"),
    "env.latent_dim": ("int", 8, "hidden preference/content vector dim"),
    "env.user_mean_scale": ("float", 1.5, "shared taste direction strength across users"),
    "env.item_quality_sigma": ("float", 0.0, "log-normal spread of item pull strength"),
    "env.feature_noise": ("float", 0.1, "noise scale on raw feature projections"),
    "env.like_coef": ("float", 1.5, "like logit slope on affinity"),
    "env.like_bias": ("float", -5.744, "like logit intercept (calibrated to ~1% marginal)"),
    "env.share_coef": ("float", 1.5, "share logit slope on affinity"),
    "env.share_bias": ("float", -7.049, "share logit intercept"),
    "env.watch_mu0": ("float", 2.48, "ln-watch-seconds intercept"),
    "env.watch_mu_coef": ("float", 0.8, "ln-watch-seconds slope on affinity"),
    "env.watch_sigma": ("float", 0.9, "ln-watch-seconds standard deviation"),
    "env.video_lengths": ("float_list", [5, 15, 30, 60, 90, 120], "video length menu (seconds)"),
    "env.reward_weights": ("float_list", [1.0, 0.0, 0.0, 0.0],
                           f"reward weights over {TASKS}"),
    # model
    "model.embed_dim": ("int", 16, "embedding dim d"),
    "model.index_dim": ("int", 5, "epistemic index dim d_z"),
    "model.tower_hidden": ("int_list", [64, 64], "tower hidden layer sizes"),
    "model.head_hidden": ("int_list", [32, 16], "overarch hidden layer sizes"),
    "model.prior_scale": ("float", 1.0, "prior network output scale"),
    "model.n_ensemble": ("int", 4, "particles for ensemble agents"),
    "model.epinet_task": ("str", "ws", f"single task label the overarch trains on, one of {TASKS}"),
    "model.index_per_example": ("bool", False, "sample one index per example instead of per batch"),
    # agent
    "agent.learning_rate": ("float", 0.01, "step size"),
    "agent.batch_size": ("int", 32, "minibatch size"),
    "agent.train_every": ("int", 1, "train cadence in steps (0 = never)"),
    "agent.buffer_capacity": ("int", 4096, "replay buffer capacity"),
    "agent.epsilon": ("float", 0.1, "exploration rate for epsilon_greedy"),
    "agent.optimizer": ("str", "sgd", "sgd or adam"),
    "agent.greedy_weights": ("float_list", [1.0, 0.0, 0.0, 0.0],
                             f"point-estimate scoring weights over {TASKS}"),
    # run
    "run.horizon": ("int", 5000, "steps per run T"),
    "run.seeds": ("int_list", list(range(20)), "seed list; one paired run per seed"),
    "run.treatment_agent": ("str", "epinet_ts", f"treatment arm policy, one of {AGENT_KINDS}"),
    "run.control_agent": ("str", "greedy_point", f"control arm policy, one of {AGENT_KINDS}"),
    "run.output_dir": ("str", "runs", "default parent directory for run outputs"),
    "run.log_interactions": ("bool", True, "write per-run interaction logs"),
    # metrics / analysis
    "metrics.buckets": ("int_list", [0, 100, 200, 400, 1000, 2000, 3000, 4000, 5000, 10000],
                        "impression-count bucket boundaries"),
    "compare.method": ("str", "bootstrap", "CI method: bootstrap or t"),
    "compare.resamples": ("int", 10000, "bootstrap resample count"),
}

PRESETS: dict[str, dict[str, object]] = {
    # production-scale architecture (slow on a desk machine)
    "paper": {
        "model.embed_dim": 128,
        "model.index_dim": 5,
        "model.head_hidden": [384, 256],
    },
}


def _parse_value(key: str, kind: str, raw: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "opt_int":
            return None if raw.lower() == "none" else int(raw)
        if kind == "int_list":
            return [int(p) for p in raw.split(",") if p.strip() != ""]
        if kind == "float_list":
            return [float(p) for p in raw.split(",") if p.strip() != ""]
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _format_value(kind: str, value) -> str:
    if kind in ("int_list", "float_list"):
        return ",".join(repr(v) if kind == "float_list" else str(v) for v in value)
    if kind == "bool":
        return "true" if value else "false"
    if kind == "opt_int":
        return "none" if value is None else str(value)
    if kind == "float":
        return repr(float(value))
    return str(value)


class ExperimentConfig:
    """A fully resolved experiment description."""

    def __init__(self, values: dict[str, object] | None = None):
        self.values: dict[str, object] = {k: d for k, (_, d, _) in SCHEMA.items()}
        if values:
            unknown = set(values) - set(SCHEMA)
            if unknown:
                raise ConfigError(
                    "unknown config keys: " + ", ".join(sorted(unknown))
                )
            self.values.update(values)
        problems = self.validate()
        if problems:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))

    # ---- construction ----

    @classmethod
    def from_text(cls, text: str, preset: str | None = None,
                  overrides: dict[str, str] | None = None) -> "ExperimentConfig":
        values: dict[str, object] = {}
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
            values.update(PRESETS[preset])
        problems = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                problems.append(f"line {lineno}: expected 'key = value', got {stripped!r}")
                continue
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in SCHEMA:
                problems.append(f"line {lineno}: unknown key {key!r}")
                continue
            try:
                values[key] = _parse_value(key, SCHEMA[key][0], raw)
            except ConfigError as exc:
                problems.append(f"line {lineno}: {exc}")
        if problems:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
        for key, raw in (overrides or {}).items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _parse_value(key, SCHEMA[key][0], raw)
        return cls(values)

    @classmethod
    def from_file(cls, path: str | Path, preset: str | None = None,
                  overrides: dict[str, str] | None = None) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text(), preset=preset, overrides=overrides)

    @classmethod
    def default(cls, **values) -> "ExperimentConfig":
        return cls(values or None)

    # ---- validation ----

    def validate(self) -> list[str]:
        v = self.values
        problems = []
        problems.extend(self.env_config().validate())
        for kind_key in ("run.treatment_agent", "run.control_agent"):
            if v[kind_key] not in AGENT_KINDS:
                problems.append(f"{kind_key} must be one of {AGENT_KINDS}, got {v[kind_key]!r}")
        if v["run.horizon"] < 0:
            problems.append(f"run.horizon must be >= 0, got {v['run.horizon']}")
        seeds = v["run.seeds"]
        if not seeds:
            problems.append("run.seeds must not be empty")
        elif len(set(seeds)) != len(seeds):
            problems.append("run.seeds must be distinct")
        if v["model.epinet_task"] not in TASKS:
            problems.append(f"model.epinet_task must be one of {TASKS}")
        if v["model.embed_dim"] < 1:
            problems.append("model.embed_dim must be >= 1")
        if v["model.index_dim"] < 1:
            problems.append("model.index_dim must be >= 1")
        if v["model.prior_scale"] < 0:
            problems.append("model.prior_scale must be >= 0")
        if v["model.n_ensemble"] < 1:
            problems.append("model.n_ensemble must be >= 1")
        buckets = v["metrics.buckets"]
        if len(buckets) < 2 or any(nxt <= prev for prev, nxt in zip(buckets, buckets[1:])):
            problems.append("metrics.buckets must be strictly increasing with >= 2 boundaries")
        elif buckets[0] < 0:
            problems.append("metrics.buckets must start at >= 0")
        cap = v["env.impression_cap"]
        if cap is not None and len(buckets) >= 2 and buckets[-1] < cap:
            problems.append(
                f"metrics.buckets last boundary {buckets[-1]} must cover "
                f"env.impression_cap {cap}"
            )
        if v["compare.method"] not in ("bootstrap", "t"):
            problems.append("compare.method must be bootstrap or t")
        if v["compare.resamples"] < 100:
            problems.append("compare.resamples must be >= 100")
        agent_problems = self.agent_config("epinet_ts").validate()
        problems.extend(p for p in agent_problems if "agent.kind" not in p)
        return problems

    # ---- views ----

    def env_config(self) -> EnvConfig:
        v = self.values
        return EnvConfig(
            num_items=v["env.num_items"],
            slate_size=v["env.slate_size"],
            impression_cap=v["env.impression_cap"],
            refresh_per_step=v["env.refresh_per_step"],
            user_feat_dim=v["env.user_feat_dim"],
            item_feat_dim=v["env.item_feat_dim"],
            latent_dim=v["env.latent_dim"],
            user_mean_scale=v["env.user_mean_scale"],
            item_quality_sigma=v["env.item_quality_sigma"],
            feature_noise=v["env.feature_noise"],
            like_coef=v["env.like_coef"],
            like_bias=v["env.like_bias"],
            share_coef=v["env.share_coef"],
            share_bias=v["env.share_bias"],
            watch_mu0=v["env.watch_mu0"],
            watch_mu_coef=v["env.watch_mu_coef"],
            watch_sigma=v["env.watch_sigma"],
            video_lengths=tuple(v["env.video_lengths"]),
            reward_weights=tuple(v["env.reward_weights"]),
        )

    def model_spec(self) -> ModelSpec:
        v = self.values
        return ModelSpec(
            user_feat_dim=v["env.user_feat_dim"],
            item_feat_dim=v["env.item_feat_dim"],
            embed_dim=v["model.embed_dim"],
            index_dim=v["model.index_dim"],
            tower_hidden=list(v["model.tower_hidden"]),
            head_hidden=list(v["model.head_hidden"]),
            prior_scale=v["model.prior_scale"],
            n_ensemble=v["model.n_ensemble"],
            epinet_task=v["model.epinet_task"],
            index_per_example=v["model.index_per_example"],
        )

    def agent_config(self, kind: str) -> AgentConfig:
        v = self.values
        return AgentConfig(
            kind=kind,
            slate_size=v["env.slate_size"],
            learning_rate=v["agent.learning_rate"],
            batch_size=v["agent.batch_size"],
            train_every=v["agent.train_every"],
            buffer_capacity=v["agent.buffer_capacity"],
            epsilon=v["agent.epsilon"],
            optimizer=v["agent.optimizer"],
            greedy_weights=tuple(v["agent.greedy_weights"]),
        )

    @property
    def arms(self) -> dict[str, str]:
        return {
            "treatment": self.values["run.treatment_agent"],
            "control": self.values["run.control_agent"],
        }

    @property
    def seeds(self) -> list[int]:
        return list(self.values["run.seeds"])

    @property
    def horizon(self) -> int:
        return self.values["run.horizon"]

    @property
    def buckets(self) -> list[int]:
        return list(self.values["metrics.buckets"])

    # ---- serialization ----

    def to_text(self) -> str:
        lines = [
            f"{key} = {_format_value(SCHEMA[key][0], self.values[key])}"
            for key in sorted(SCHEMA)
        ]
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    @staticmethod
    def describe_keys() -> str:
        """Rendered key/default/help table for --help-config."""
        rows = []
        for key in sorted(SCHEMA):
            kind, default, help_text = SCHEMA[key]
            rows.append(f"{key} = {_format_value(kind, default)}\n    {help_text}")
        return "\n".join(rows)

"""Seeded multi-run A/B execution.

``run_experiment`` runs every (seed, arm) pair as an isolated task: fresh
environment, fresh agent, own random streams. Both arms of a seed share
the environment stream (paired design), while agent streams are derived
from the agent kind, so two arms configured with the same policy behave
identically. Tasks run in parallel processes when more than one worker is
allowed (``EPINET_BANDIT_THREADS``, default: hardware count) and results
merge in (seed, arm) order, so outputs are byte-identical regardless of
scheduling.
"""

from __future__ import annotations

import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .. import __version__
from ..agents import build_agent
from ..env_sim import ColdStartEnv, format_interaction_line
from ..errors import ConfigError
from ..rng import SeedStream
from .config import ExperimentConfig
from .metrics import BucketAccumulator, MetricRow, write_metrics_csv

__all__ = ["run_experiment", "run_single_arm", "worker_count"]

ARM_ORDER = ("treatment", "control")


def worker_count() -> int:
    raw = os.environ.get("EPINET_BANDIT_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"EPINET_BANDIT_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"EPINET_BANDIT_THREADS must be >= 1, got {n}")
    return n


def run_single_arm(config_text: str, seed: int, arm: str, kind: str,
                   log_path: str | None) -> tuple[list[MetricRow], dict]:
    """One full bandit run; returns bucket rows and run-level stats."""
    config = ExperimentConfig.from_text(config_text)
    root = SeedStream(seed)
    env = ColdStartEnv(config.env_config(), root.child("env"))
    agent = build_agent(config.agent_config(kind), config.model_spec(),
                        root.child(f"agent-{kind}"))
    buckets = BucketAccumulator(config.buckets)
    horizon = config.horizon
    reward_w = np.asarray(config.env_config().reward_weights)

    cumulative_reward = 0.0
    cumulative_regret = 0.0
    tail_start = horizon - max(1, horizon // 10)
    tail_regret = 0.0
    tail_steps = 0
    log_lines: list[str] = []

    for t in range(horizon):
        action = agent.act(env.current_user.psi, env.pool)
        ids, expected = env.expected_item_rewards()
        m = config.env_config().slate_size
        oracle = float(np.partition(expected, len(expected) - m)[-m:].sum())
        lookup = dict(zip(ids.tolist(), expected.tolist()))
        realized_expectation = float(sum(lookup[i] for i in action))
        interactions = env.step(action)
        agent.observe_and_update(interactions)

        step_regret = oracle - realized_expectation
        cumulative_regret += step_regret
        if t >= tail_start:
            tail_regret += step_regret
            tail_steps += 1
        for it in interactions:
            cumulative_reward += float(it.labels @ reward_w)
            buckets.add(it)
        if log_path is not None:
            log_lines.extend(format_interaction_line(it) for it in interactions)

    if log_path is not None:
        path = Path(log_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(log_lines) + ("\n" if log_lines else ""))

    stats = {
        "arm": arm,
        "kind": kind,
        "seed": seed,
        "steps": horizon,
        "cumulative_reward": cumulative_reward,
        "cumulative_regret": cumulative_regret,
        "regret_tail_mean": (tail_regret / tail_steps) if tail_steps else 0.0,
        "interactions": horizon * config.env_config().slate_size,
    }
    return buckets.rows(arm, seed, cumulative_regret), stats


def _task(args):
    key, *rest = args
    return key, run_single_arm(*rest)


def run_experiment(config: ExperimentConfig, out_dir: str | Path,
                   verbose: bool = False) -> Path:
    """Execute all seeds x arms; write manifest, metrics CSV, stats, logs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config_text = config.to_text()
    log_dir = out / "logs"
    arms = config.arms

    jobs = []
    for seed in config.seeds:
        for arm in ARM_ORDER:
            kind = arms[arm]
            log_path = (
                str(log_dir / f"{arm}_seed{seed}.log")
                if config.values["run.log_interactions"] else None
            )
            jobs.append(((seed, arm, kind), config_text, seed, arm, kind, log_path))

    results: dict[tuple, tuple[list[MetricRow], dict]] = {}
    workers = min(worker_count(), len(jobs)) if jobs else 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for key, payload in pool.map(_task, jobs):
                results[key] = payload
                if verbose:
                    print(f"[run] {key[1]} seed {key[0]} done", file=sys.stderr)
    else:
        for job in jobs:
            key, payload = _task(job)
            results[key] = payload
            if verbose:
                print(f"[run] {key[1]} seed {key[0]} done", file=sys.stderr)

    rows: list[MetricRow] = []
    stats: list[dict] = []
    for seed in config.seeds:
        for arm in ARM_ORDER:
            r, s = results[(seed, arm, arms[arm])]
            rows.extend(r)
            stats.append(s)

    write_metrics_csv(out / "metrics.csv", rows)
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")

    manifest = {
        "fingerprint": config.fingerprint(),
        "package_version": __version__,
        "arms": arms,
        "seeds": config.seeds,
        "bucket_boundaries": config.buckets,
        "rng_roots": {
            f"seed{seed}": {
                "env": SeedStream(seed).child("env").root_description(),
                **{
                    arm: SeedStream(seed).child(f"agent-{arms[arm]}").root_description()
                    for arm in ARM_ORDER
                },
            }
            for seed in config.seeds
        },
        "config": config_text,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out

"""Treatment vs control comparison with seed-level confidence intervals.

Rates are ratio-of-sums per (arm, seed, bucket). For each bucket and
metric the per-seed percent change (paired by seed) is averaged; the 95%
interval around that mean comes from a seed-level bootstrap (percentile
method) or a t-interval. A change counts as significant only when its
interval excludes zero.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as sstats

from ..errors import AnalysisError
from .metrics import MetricRow, read_metrics_csv

__all__ = [
    "RATE_METRICS",
    "ComparisonRow",
    "Comparison",
    "compare_arms",
    "bootstrap_ci",
    "t_ci",
    "seed_bucket_table",
    "lowest_bucket_share_diff",
    "write_comparison_csv",
    "read_comparison_csv",
    "COMPARISON_HEADER",
]

# metric name -> (numerator field, denominator field)
RATE_METRICS = {
    "like_rate": ("likes", "impressions"),
    "completion_rate": ("completions", "impressions"),
    "ws_rate": ("ws_sum", "impressions"),
    "vvs_rate": ("vvs_sum", "impressions"),
}

COMPARISON_HEADER = [
    "metric", "bucket_lo", "bucket_hi", "n_seeds",
    "pct_change", "ci_lo", "ci_hi", "significant",
]


@dataclass
class ComparisonRow:
    metric: str
    bucket_lo: int
    bucket_hi: int
    n_seeds: int
    pct_change: float      # NaN when undefined (empty bucket / zero control rate)
    ci_lo: float
    ci_hi: float
    significant: bool


@dataclass
class Comparison:
    rows: list[ComparisonRow]
    overall: dict


def bootstrap_ci(values: np.ndarray, resamples: int = 10000,
                 confidence: float = 0.95, seed: int = 20240901) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of ``values``."""
    values = np.asarray(values, dtype=np.float64)
    gen = np.random.Generator(np.random.Philox(seed))
    idx = gen.integers(0, len(values), size=(resamples, len(values)))
    means = values[idx].mean(axis=1)
    alpha = (1.0 - confidence) / 2.0
    return (
        float(np.quantile(means, alpha)),
        float(np.quantile(means, 1.0 - alpha)),
    )


def t_ci(values: np.ndarray, confidence: float = 0.95) -> tuple[float, float]:
    """Student-t interval for the mean of ``values``."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n < 2:
        raise AnalysisError(f"t interval needs >= 2 values, got {n}")
    mean = float(values.mean())
    sd = float(values.std(ddof=1))
    half = float(sstats.t.ppf(0.5 + confidence / 2.0, n - 1)) * sd / math.sqrt(n)
    return mean - half, mean + half


def seed_bucket_table(rows: list[MetricRow]) -> dict:
    """Nested lookup: table[arm][seed][bucket_lo] -> MetricRow."""
    table: dict = {}
    for row in rows:
        table.setdefault(row.arm, {}).setdefault(row.seed, {})[row.bucket_lo] = row
    return table


def _per_seed_pct_changes(table: dict, seeds: list[int], bucket_lo: int,
                          metric: str) -> np.ndarray:
    """Paired percent changes for one bucket/metric; NaN seeds dropped."""
    out = []
    for seed in seeds:
        rt = table["treatment"][seed].get(bucket_lo)
        rc = table["control"][seed].get(bucket_lo)
        if rt is None or rc is None:
            continue
        if metric == "impression_share":
            tot_t = sum(r.impressions for r in table["treatment"][seed].values())
            tot_c = sum(r.impressions for r in table["control"][seed].values())
            if tot_t == 0 or tot_c == 0:
                continue
            vt = rt.impressions / tot_t
            vc = rc.impressions / tot_c
        else:
            num, den = RATE_METRICS[metric]
            if getattr(rt, den) == 0 or getattr(rc, den) == 0:
                continue
            vt = getattr(rt, num) / getattr(rt, den)
            vc = getattr(rc, num) / getattr(rc, den)
        if vc == 0.0:
            continue
        out.append(100.0 * (vt - vc) / vc)
    return np.asarray(out, dtype=np.float64)


def compare_arms(run_dir: str | Path, method: str = "bootstrap",
                 resamples: int = 10000) -> Comparison:
    """Build the per-bucket comparison table plus overall reward stats."""
    run_dir = Path(run_dir)
    metrics_path = run_dir / "metrics.csv"
    if not metrics_path.exists():
        raise AnalysisError(f"{run_dir}: no metrics.csv (not a run directory?)")
    rows = read_metrics_csv(metrics_path)
    table = seed_bucket_table(rows)
    for arm in ("treatment", "control"):
        if arm not in table:
            raise AnalysisError(f"{run_dir}: arm {arm!r} missing from metrics")
    seeds = sorted(set(table["treatment"]) & set(table["control"]))
    if len(seeds) < 2:
        raise AnalysisError(f"need >= 2 seeds for intervals, found {len(seeds)}")
    if method not in ("bootstrap", "t"):
        raise AnalysisError(f"unknown comparison method {method!r}")

    bucket_pairs = sorted(
        {(r.bucket_lo, r.bucket_hi) for r in rows},
        key=lambda p: p[0],
    )
    out_rows = []
    for metric in list(RATE_METRICS) + ["impression_share"]:
        for lo, hi in bucket_pairs:
            pct = _per_seed_pct_changes(table, seeds, lo, metric)
            if len(pct) < 2:
                out_rows.append(ComparisonRow(metric, lo, hi, len(pct),
                                              float("nan"), float("nan"),
                                              float("nan"), False))
                continue
            if method == "bootstrap":
                ci_lo, ci_hi = bootstrap_ci(pct, resamples=resamples)
            else:
                ci_lo, ci_hi = t_ci(pct)
            mean = float(pct.mean())
            significant = ci_lo > 0.0 or ci_hi < 0.0
            out_rows.append(ComparisonRow(metric, lo, hi, len(pct),
                                          mean, ci_lo, ci_hi, significant))

    overall = _overall_stats(run_dir, seeds)
    return Comparison(rows=out_rows, overall=overall)


def _overall_stats(run_dir: Path, seeds: list[int]) -> dict:
    stats_path = run_dir / "stats.json"
    if not stats_path.exists():
        raise AnalysisError(f"{run_dir}: no stats.json")
    records = json.loads(stats_path.read_text())
    by_arm_seed = {(r["arm"], r["seed"]): r for r in records}
    try:
        t_reward = np.array([by_arm_seed[("treatment", s)]["cumulative_reward"] for s in seeds])
        c_reward = np.array([by_arm_seed[("control", s)]["cumulative_reward"] for s in seeds])
        t_regret = np.array([by_arm_seed[("treatment", s)]["cumulative_regret"] for s in seeds])
        c_regret = np.array([by_arm_seed[("control", s)]["cumulative_regret"] for s in seeds])
        t_tail = np.array([by_arm_seed[("treatment", s)]["regret_tail_mean"] for s in seeds])
        c_tail = np.array([by_arm_seed[("control", s)]["regret_tail_mean"] for s in seeds])
    except KeyError as exc:
        raise AnalysisError(f"{run_dir}: stats.json missing arm/seed {exc}") from exc

    if np.array_equal(t_reward, c_reward):
        p_one_sided = 1.0  # identical arms carry no evidence either way
    else:
        p_one_sided = float(
            sstats.ttest_rel(t_reward, c_reward, alternative="greater").pvalue
        )
    return {
        "n_seeds": len(seeds),
        "treatment_reward_mean": float(t_reward.mean()),
        "control_reward_mean": float(c_reward.mean()),
        "reward_pct_change": (
            float(100.0 * (t_reward.mean() - c_reward.mean()) / c_reward.mean())
            if c_reward.mean() != 0 else float("nan")
        ),
        "reward_p_one_sided": p_one_sided,
        "treatment_regret_mean": float(t_regret.mean()),
        "control_regret_mean": float(c_regret.mean()),
        "treatment_tail_regret_mean": float(t_tail.mean()),
        "control_tail_regret_mean": float(c_tail.mean()),
    }


def lowest_bucket_share_diff(run_dir: str | Path,
                             resamples: int = 10000) -> dict:
    """Per-seed (treatment - control) share of impressions in the lowest bucket.

    Returns the seed-mean difference with a bootstrap interval; the
    treatment reallocates toward cold content when the interval sits
    above zero.
    """
    rows = read_metrics_csv(Path(run_dir) / "metrics.csv")
    table = seed_bucket_table(rows)
    seeds = sorted(set(table.get("treatment", {})) & set(table.get("control", {})))
    if len(seeds) < 2:
        raise AnalysisError("need >= 2 seeds for a share comparison")
    lowest = min(r.bucket_lo for r in rows)
    diffs = []
    for seed in seeds:
        shares = {}
        for arm in ("treatment", "control"):
            total = sum(r.impressions for r in table[arm][seed].values())
            if total == 0:
                break
            shares[arm] = table[arm][seed][lowest].impressions / total
        if len(shares) == 2:
            diffs.append(shares["treatment"] - shares["control"])
    diffs = np.asarray(diffs)
    ci_lo, ci_hi = bootstrap_ci(diffs, resamples=resamples)
    return {
        "bucket_lo": lowest,
        "n_seeds": len(diffs),
        "mean_diff": float(diffs.mean()),
        "ci_lo": ci_lo,
        "ci_hi": ci_hi,
        "excludes_zero": ci_lo > 0.0 or ci_hi < 0.0,
    }


def write_comparison_csv(path: str | Path, comparison: Comparison) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COMPARISON_HEADER)
    for r in comparison.rows:
        writer.writerow([
            r.metric, r.bucket_lo, r.bucket_hi, r.n_seeds,
            "" if math.isnan(r.pct_change) else repr(r.pct_change),
            "" if math.isnan(r.ci_lo) else repr(r.ci_lo),
            "" if math.isnan(r.ci_hi) else repr(r.ci_hi),
            "true" if r.significant else "false",
        ])
    Path(path).write_text(buf.getvalue())


def read_comparison_csv(path: str | Path) -> list[ComparisonRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != COMPARISON_HEADER:
            raise AnalysisError(f"{path}: unexpected comparison header {header}")
        for rec in reader:
            if not rec or not rec[0]:
                continue
            rows.append(ComparisonRow(
                metric=rec[0],
                bucket_lo=int(rec[1]),
                bucket_hi=int(rec[2]),
                n_seeds=int(rec[3]),
                pct_change=float(rec[4]) if rec[4] else float("nan"),
                ci_lo=float(rec[5]) if rec[5] else float("nan"),
                ci_hi=float(rec[6]) if rec[6] else float("nan"),
                significant=rec[7] == "true",
            ))
    return rows

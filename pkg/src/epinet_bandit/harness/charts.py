"""Chart emission: one bar-with-interval SVG per metric across buckets.

Buckets with no defined estimate render as gaps, never as zero bars.
Output is deterministic: a fixed SVG hash salt and stripped date metadata
make regeneration from the same comparison byte-identical.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .compare import RATE_METRICS, Comparison, ComparisonRow  # noqa: E402

__all__ = ["emit_charts", "CHART_METRICS"]

CHART_METRICS = list(RATE_METRICS) + ["impression_share"]

_TITLES = {
    "like_rate": "Likes per impression",
    "completion_rate": "Completions per impression",
    "ws_rate": "Watch score per impression",
    "vvs_rate": "View seconds score per impression",
    "impression_share": "Impression reallocation",
}


def _bucket_label(lo: int, hi: int) -> str:
    return f"{lo}:{hi}"


def _render_metric(rows: list[ComparisonRow], metric: str, path: Path) -> None:
    rows = [r for r in rows if r.metric == metric]
    rows.sort(key=lambda r: r.bucket_lo)
    labels = [_bucket_label(r.bucket_lo, r.bucket_hi) for r in rows]
    xs = range(len(rows))

    fig, ax = plt.subplots(figsize=(7.0, 3.6))
    lo_ends, hi_ends = [], []
    for x, row in zip(xs, rows):
        if math.isnan(row.pct_change):
            continue  # gap: no bar for an empty bucket
        err_lo = row.pct_change - row.ci_lo
        err_hi = row.ci_hi - row.pct_change
        color = "#2b7a3f" if row.significant and row.pct_change > 0 else (
            "#a03030" if row.significant else "#5b7fa6")
        ax.bar(x, row.pct_change, width=0.7, color=color,
               yerr=[[err_lo], [err_hi]], capsize=3, ecolor="#333333")
        lo_ends.append(row.ci_lo)
        hi_ends.append(row.ci_hi)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_xlabel("impression-count bucket")
    ax.set_ylabel("% change vs control")
    ax.set_title(_TITLES.get(metric, metric))
    if lo_ends:
        span = max(hi_ends) - min(lo_ends) or 1.0
        ax.set_ylim(min(lo_ends) - 0.1 * span, max(hi_ends) + 0.1 * span)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_charts(comparison: Comparison, out_dir: str | Path) -> list[Path]:
    """Write one SVG per metric; returns the created paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": "epinet-bandit"}):
        paths = []
        for metric in CHART_METRICS:
            path = out / f"{metric}.svg"
            _render_metric(comparison.rows, metric, path)
            paths.append(path)
    return paths

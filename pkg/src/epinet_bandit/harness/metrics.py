"""Impression-bucketed metric rows and their CSV form.

Interactions are grouped by the item's impression count at serve time
into half-open buckets ``[b_i, b_{i+1})``. Rates are always derived as
ratios of bucket sums, never by averaging per-interaction rates.
``cumulative_regret`` is a run-level quantity and is repeated on every
row of its (arm, seed) group.
"""

from __future__ import annotations

import bisect
import csv
import io
from dataclasses import dataclass
from pathlib import Path

from ..env_sim import Interaction
from ..errors import AnalysisError

CSV_HEADER = [
    "arm", "seed", "bucket_lo", "bucket_hi", "impressions", "likes",
    "completions", "ws_sum", "vvs_sum", "cumulative_regret",
]

__all__ = [
    "CSV_HEADER",
    "MetricRow",
    "BucketAccumulator",
    "bucket_index",
    "write_metrics_csv",
    "read_metrics_csv",
    "metrics_csv_text",
]


@dataclass
class MetricRow:
    arm: str
    seed: int
    bucket_lo: int
    bucket_hi: int
    impressions: int
    likes: float
    completions: int
    ws_sum: float
    vvs_sum: float
    cumulative_regret: float

    def as_record(self) -> list:
        return [
            self.arm, self.seed, self.bucket_lo, self.bucket_hi,
            self.impressions, repr(self.likes), self.completions,
            repr(self.ws_sum), repr(self.vvs_sum), repr(self.cumulative_regret),
        ]


def bucket_index(boundaries: list[int], count: int) -> int:
    """Index of the half-open bucket containing ``count``."""
    if count < boundaries[0] or count >= boundaries[-1]:
        raise AnalysisError(
            f"impression count {count} outside bucket range "
            f"[{boundaries[0]}, {boundaries[-1]})"
        )
    return bisect.bisect_right(boundaries, count) - 1


class BucketAccumulator:
    """Tallies one run's interactions into bucket rows."""

    def __init__(self, boundaries: list[int]):
        self.boundaries = list(boundaries)
        n = len(boundaries) - 1
        self.impressions = [0] * n
        self.likes = [0.0] * n
        self.completions = [0] * n
        self.ws_sum = [0.0] * n
        self.vvs_sum = [0.0] * n

    def add(self, it: Interaction) -> None:
        b = bucket_index(self.boundaries, it.impressions_at_serve)
        self.impressions[b] += 1
        self.likes[b] += float(it.labels[1])
        self.completions[b] += 1 if it.completed_count >= 1 else 0
        self.ws_sum[b] += float(it.labels[0])
        self.vvs_sum[b] += float(it.labels[3])

    def rows(self, arm: str, seed: int, cumulative_regret: float) -> list[MetricRow]:
        out = []
        for i in range(len(self.boundaries) - 1):
            out.append(MetricRow(
                arm=arm,
                seed=seed,
                bucket_lo=self.boundaries[i],
                bucket_hi=self.boundaries[i + 1],
                impressions=self.impressions[i],
                likes=self.likes[i],
                completions=self.completions[i],
                ws_sum=self.ws_sum[i],
                vvs_sum=self.vvs_sum[i],
                cumulative_regret=cumulative_regret,
            ))
        return out


def metrics_csv_text(rows: list[MetricRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.as_record())
    return buf.getvalue()


def write_metrics_csv(path: str | Path, rows: list[MetricRow]) -> None:
    Path(path).write_text(metrics_csv_text(rows))


def read_metrics_csv(path: str | Path) -> list[MetricRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise AnalysisError(f"{path}: unexpected CSV header {header}")
        rows = []
        for rec in reader:
            rows.append(MetricRow(
                arm=rec[0],
                seed=int(rec[1]),
                bucket_lo=int(rec[2]),
                bucket_hi=int(rec[3]),
                impressions=int(rec[4]),
                likes=float(rec[5]),
                completions=int(rec[6]),
                ws_sum=float(rec[7]),
                vvs_sum=float(rec[8]),
                cumulative_regret=float(rec[9]),
            ))
    return rows

"""Single-target ranking metrics and metric reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RankingOutcome:
    target: int
    ranked: tuple

    def __post_init__(self):
        if len(set(self.ranked)) != len(self.ranked):
            raise ValueError("ranked list repeats an id")

    @property
    def rank(self) -> int | None:
        """1-based position of the target, None when absent."""
        try:
            return self.ranked.index(self.target) + 1
        except ValueError:
            return None


def _rank_within(outcome: RankingOutcome, K: int):
    if K < 1:
        raise ValueError("K must be >= 1")
    r = outcome.rank
    return r if r is not None and r <= K else None


def hr_at_k(outcome: RankingOutcome, K: int) -> float:
    return 1.0 if _rank_within(outcome, K) else 0.0


def ndcg_at_k(outcome: RankingOutcome, K: int) -> float:
    r = _rank_within(outcome, K)
    return 1.0 / math.log2(r + 1) if r else 0.0


def mrr_at_k(outcome: RankingOutcome, K: int) -> float:
    r = _rank_within(outcome, K)
    return 1.0 / r if r else 0.0


METRICS = {"HR": hr_at_k, "NDCG": ndcg_at_k, "MRR": mrr_at_k}


def mean_metrics(outcomes, ks=(1, 5, 10)) -> dict[tuple[str, int], float]:
    """Average of each metric over the outcomes, keyed by (metric, K)."""
    outcomes = list(outcomes)
    out = {}
    for name, fn in METRICS.items():
        for k in ks:
            out[(name, k)] = float(np.mean([fn(o, k) for o in outcomes])) if outcomes else 0.0
    return out


@dataclass
class MetricReport:
    """Rows of (seed, mode, metric, K, value); seed "mean" rows average over seeds."""

    rows: list = field(default_factory=list)

    def add(self, seed, mode, values: dict):
        for (metric, k), v in sorted(values.items()):
            self.rows.append((str(seed), mode, metric, int(k), float(v)))

    def seeds(self):
        return sorted({r[0] for r in self.rows if r[0] != "mean"}, key=lambda s: (len(s), s))

    def value(self, seed, mode, metric, k):
        for r in self.rows:
            if r[:4] == (str(seed), mode, metric, k):
                return r[4]
        raise KeyError((seed, mode, metric, k))

    def with_means(self) -> "MetricReport":
        per_seed = [r for r in self.rows if r[0] != "mean"]
        groups: dict = {}
        for seed, mode, metric, k, v in per_seed:
            groups.setdefault((mode, metric, k), []).append(v)
        means = [("mean", mode, metric, k, float(np.mean(vs))) for (mode, metric, k), vs in groups.items()]
        return MetricReport(per_seed + sorted(means))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "mode", "metric", "K", "value"])
        for seed, mode, metric, k, v in self.rows:
            w.writerow([seed, mode, metric, k, f"{v:.6f}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricReport":
        rows = []
        for r in csv.DictReader(io.StringIO(text)):
            rows.append((r["seed"], r["mode"], r["metric"], int(r["K"]), float(r["value"])))
        return cls(rows)

    def summary(self) -> str:
        """Table of seed means, one line per (mode, metric, K)."""
        means = [r for r in self.rows if r[0] == "mean"] or self.rows
        width = max((len(r[1]) for r in means), default=4)
        lines = [f"{'mode':<{width}}  metric@K    value"]
        for _, mode, metric, k, v in means:
            lines.append(f"{mode:<{width}}  {metric + '@' + str(k):<10}  {v:.4f}")
        return "\n".join(lines)

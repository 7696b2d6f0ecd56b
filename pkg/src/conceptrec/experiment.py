"""Multi-seed runs: one pipeline run directory per seed, metrics aggregated with means."""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .config import RunConfig
from .evaluation import MetricReport
from .pipeline import Pipeline


def run_experiment(config: RunConfig, root, seeds=None, force=False) -> MetricReport:
    root = Path(root)
    seeds = list(config.eval.seeds if seeds is None else seeds)
    merged = MetricReport()
    for seed in seeds:
        cfg = dataclasses.replace(config, seed=int(seed))
        report = Pipeline(root / f"seed-{seed}", cfg, force=force).run_all()
        merged.rows.extend(report.rows)
    merged = merged.with_means()
    root.mkdir(parents=True, exist_ok=True)
    (root / "metrics.csv").write_text(merged.to_csv())
    return merged

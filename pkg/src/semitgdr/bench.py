"""Monte-Carlo replicate runner producing "mean (SD)" summary tables."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .evaluation import evaluate_replicate
from .simulation import SimScenario, generate_replicate
from .tgdr_engine import TgdrConfig, Variant

METRICS = ("tpr_main", "fpr_main", "tpr_int", "fpr_int", "mse_main", "mse_int", "rmse_spline", "pe",
           "rmse_curve", "logrank")


def replicate_seeds(seed: int, reps: int) -> list[int]:
    """Independent per-replicate seeds derived from one root seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(reps)]


def run_replicate(scenario: SimScenario, config: TgdrConfig, variants) -> dict:
    train, test, truth = generate_replicate(scenario)
    out = {}
    for v in variants:
        fit, report = evaluate_replicate(train, test, truth, replace(config, variant=Variant.parse(v)))
        row = report.as_dict()
        row["t_star"] = list(fit.t_star)
        out[Variant.parse(v).value] = row
    return out


def _job(args):
    return run_replicate(*args)


def run_bench(scenario: SimScenario, config: TgdrConfig, variants, reps: int, jobs: int = 1) -> dict:
    """Run ``reps`` seeded replicates; results are independent of ``jobs``."""
    variants = [Variant.parse(v).value for v in variants]
    seeds = replicate_seeds(scenario.seed, reps)
    tasks = [(replace(scenario, seed=s), config, variants) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_job, tasks))
    else:
        rows = [_job(t) for t in tasks]
    return {"replicates": rows, "summary": summarize(rows, variants), "variants": variants}


def summarize(rows, variants) -> dict:
    summary = {}
    for v in variants:
        cell = {}
        for k in METRICS:
            vals = [r[v][k] for r in rows if r[v].get(k) is not None]
            vals = [x for x in vals if np.isfinite(x)]
            if vals:
                sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
                cell[k] = {"mean": float(np.mean(vals)), "sd": sd, "n": len(vals)}
        summary[v] = cell
    return summary


def format_table(summary: dict, digits: int = 3) -> str:
    """Plain-text table, one row per variant, cells as ``mean (SD)``."""
    cols = [k for k in METRICS if any(k in cell for cell in summary.values())]
    head = ["method"] + cols
    lines = ["\t".join(head)]
    for v, cell in summary.items():
        row = [v]
        for k in cols:
            c = cell.get(k)
            row.append("NA" if c is None else f"{c['mean']:.{digits}f} ({c['sd']:.{digits}f})")
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def default_jobs() -> int:
    return max(1, (os.cpu_count() or 1))

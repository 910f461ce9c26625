"""Experiment recipes: heavy priming, replay-number sweep, component ablation.

Each recipe is a pure function of (config, seeds). Raw per-seed tables and
their summaries are returned as lists of dicts and, given ``out_dir``, written
as CSV next to one run directory per (variant, seed).
"""
from __future__ import annotations

import math
import os
import statistics

from .config import RunConfig
from .replay import METRIC_FIELDS, RunResult, TrainingRun, run_training
from .report import write_csv, write_run

PRIME_FIELDS = METRIC_FIELDS + ["phase"]
SUMMARY_FIELDS = ["mean_pass_at_1", "std_pass_at_1", "n_seeds"]
COMPONENT_VARIANTS = ("reset_data_only", "hybrid_only", "full", "base")


def summarize(values) -> dict:
    values = list(values)
    mean = math.fsum(values) / len(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return {"mean_pass_at_1": mean, "std_pass_at_1": std, "n_seeds": len(values)}


# ---------------------------------------------------------------------------
# heavy priming

def heavy_priming_run(cfg: RunConfig, prime_repeats: int = 200) -> RunResult:
    """Plain DPO whose first transition batch is trained on ``prime_repeats``
    times before the remaining batches; rows gain a ``phase`` column."""
    if prime_repeats < 1:
        raise ValueError("prime_repeats must be >= 1")
    result = TrainingRun(cfg.replace(mode="base")).run(prime_repeats)
    for row in result.rows:
        row["phase"] = "prime" if row["iteration"] == 1 else "standard"
    return result


def priming_experiment(cfg: RunConfig, prime_repeats: int = 200, out_dir=None):
    """Primed vs standard final pass@1 for every seed in ``cfg.seeds``;
    returns (raw, summary, results keyed by (variant, seed))."""
    rows, results = [], {}
    for seed in cfg.seeds:
        scfg = cfg.replace(seed=seed)
        standard = heavy_priming_run(scfg, 1)
        primed = heavy_priming_run(scfg, prime_repeats)
        results[("standard", seed)], results[("primed", seed)] = standard, primed
        rows.append({"seed": seed, "standard": standard.final_pass_at_1,
                     "primed": primed.final_pass_at_1})
        if out_dir:
            for name, res in (("standard", standard), ("primed", primed)):
                write_run(os.path.join(out_dir, name, f"seed{seed}"), scfg, res, PRIME_FIELDS,
                          {"prime_repeats": prime_repeats if name == "primed" else 1})
    summary = [{"variant": "standard", **summarize(r["standard"] for r in rows)},
               {"variant": "primed", **summarize(r["primed"] for r in rows)}]
    if out_dir:
        write_csv(rows, os.path.join(out_dir, "raw.csv"), ["seed", "standard", "primed"])
        write_csv(summary, os.path.join(out_dir, "summary.csv"), ["variant"] + SUMMARY_FIELDS)
    return rows, summary, results


# ---------------------------------------------------------------------------
# replay-number sweep

def ablate_replay(cfg: RunConfig, L_values, out_dir=None):
    """run_training per replay number with shared seeds; (raw, summary)."""
    L_values = list(L_values)
    if not L_values:
        raise ValueError("L_values must be non-empty")
    raw = []
    for L in L_values:
        for seed in cfg.seeds:
            rcfg = cfg.replace(mode="lorr", L=L, seed=seed)
            res = run_training(rcfg)
            raw.append({"L": L, "seed": seed, "final_pass_at_1": res.final_pass_at_1})
            if out_dir:
                write_run(os.path.join(out_dir, f"L{L}", f"seed{seed}"), rcfg, res, METRIC_FIELDS)
    summary = [{"L": L, **summarize(r["final_pass_at_1"] for r in raw if r["L"] == L)}
               for L in L_values]
    if out_dir:
        write_csv(raw, os.path.join(out_dir, "raw.csv"), ["L", "seed", "final_pass_at_1"])
        write_csv(summary, os.path.join(out_dir, "summary.csv"), ["L"] + SUMMARY_FIELDS)
    return raw, summary


# ---------------------------------------------------------------------------
# component ablation

def component_config(cfg: RunConfig, variant: str) -> RunConfig:
    full = cfg.replace(mode="lorr")
    if variant == "full":
        return full
    if variant == "base":
        return cfg.replace(mode="base")
    if variant == "reset_data_only":
        # rollout/initial mixing kept, SFT term removed
        return full.replace(lambda_init=0.0, lambda_schedule="constant")
    if variant == "hybrid_only":
        # every pair from policy rollouts, SFT ratio schedule kept
        return full.replace(gate_mode="prob_rollout", eps_init=1.0, eps_schedule="constant")
    raise ValueError(f"unknown variant {variant!r}")


def ablate_components(cfg: RunConfig, out_dir=None):
    """(raw, summary, results) for the four variants over ``cfg.seeds``."""
    raw, results = [], {}
    for variant in COMPONENT_VARIANTS:
        for seed in cfg.seeds:
            vcfg = component_config(cfg, variant).replace(seed=seed)
            res = run_training(vcfg)
            results[(variant, seed)] = res
            raw.append({"variant": variant, "seed": seed,
                        "final_pass_at_1": res.final_pass_at_1})
            if out_dir:
                write_run(os.path.join(out_dir, variant, f"seed{seed}"), vcfg, res, METRIC_FIELDS)
    summary = [{"variant": v, **summarize(r["final_pass_at_1"] for r in raw if r["variant"] == v)}
               for v in COMPONENT_VARIANTS]
    if out_dir:
        write_csv(raw, os.path.join(out_dir, "raw.csv"), ["variant", "seed", "final_pass_at_1"])
        write_csv(summary, os.path.join(out_dir, "summary.csv"), ["variant"] + SUMMARY_FIELDS)
    return raw, summary, results

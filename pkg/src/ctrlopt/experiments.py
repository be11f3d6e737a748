"""Ablation presets and the two-objective front geometry study."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from .aggregation import FRONTS, AggKind, Aggregator, Grid2D, contour_data, pareto_argmax
from .config import RunConfig
from .logs import emit_logs
from .training import RunResult, run_training

# preset -> (algorithm, aggregation, sigmoid alignment)
PRESETS: dict[str, tuple[str, str, bool]] = {
    "grpo_am": ("grpo", "arithmetic_mean", False),
    "grpo_gm": ("grpo", "geometric_mean", False),
    "grpo_gm_sigmoid": ("grpo", "geometric_mean", True),
    "gdpo_am": ("gdpo", "arithmetic_mean", False),
    "gdpo_lse": ("gdpo", "lse_softmin", False),
    "gdpo_lse_sigmoid": ("gdpo", "lse_softmin", True),
}

DEFAULT_ABLATION_TASK = "builtin:conflict"


class UnknownPresetError(KeyError):
    pass


def preset_config(preset: str, seed: int, base: RunConfig | None = None, **overrides) -> RunConfig:
    try:
        algorithm, aggregation, align = PRESETS[preset]
    except KeyError:
        raise UnknownPresetError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}") from None
    if base is None:
        base = RunConfig(seed=seed, task_file=DEFAULT_ABLATION_TASK)
    return base.with_(seed=seed, algorithm=algorithm, aggregation=aggregation, sigmoid_align=align, **overrides)


def result_row(preset: str, res: RunResult) -> dict:
    s = res.sampled
    row = {
        "preset": preset,
        "seed": res.config.seed,
        "sor": res.beam.sor,
        "ssor": res.beam.ssor,
        "sim": res.beam.sim,
        "ri": res.beam.ri,
        "n": res.beam.n,
        "sampled_sor": s.report.sor,
        "sampled_ssor": s.report.ssor,
        "sampled_sim": s.report.sim,
        "sampled_ri": s.report.ri,
        "valid_frac": s.report.n_valid / s.report.n,
        "band_violation": s.band_violation,
        "initial_reward": res.initial_reward,
        "final_reward": res.final_reward,
    }
    for name, v in s.shaped.items():
        row[f"shaped_{name}"] = v
    return row


def run_ablation(
    presets: str | Sequence[str],
    seeds: Sequence[int],
    out: str | Path | None = None,
    base: RunConfig | None = None,
    **overrides,
) -> list[dict]:
    """Run every (preset, seed) pair and return one comparison row each.

    With ``out`` set, each run's trajectory log lands in
    ``out/<preset>/seed<k>/`` and the table in ``out/ablation.tsv``.
    """
    if isinstance(presets, str):
        presets = [presets]
    for p in presets:
        if p not in PRESETS:
            raise UnknownPresetError(f"unknown preset {p!r}; choose from {sorted(PRESETS)}")
    rows = []
    for p in presets:
        for seed in seeds:
            cfg = preset_config(p, seed, base, **overrides)
            run_dir = Path(out) / p / f"seed{seed}" if out else None
            res = run_training(cfg, out_dir=run_dir, write=run_dir is not None)
            rows.append(result_row(p, res))
    if out:
        emit_logs(rows, Path(out) / "ablation.tsv")
    return rows


SUMMARY_COLUMNS = ["front", "aggregator", "t_star", "r1", "r2", "location"]


def run_pareto_analysis(front: str, out: str | Path, resolution: int = 1000, lse_k: float = 5.0) -> list[dict]:
    """Grid argmax per aggregator on one front (or ``family`` / ``all``) plus contour tables."""
    if front == "family":
        names = [n for n in FRONTS if n != "linear"]
    elif front == "all":
        names = list(FRONTS)
    elif front in FRONTS:
        names = [front]
    else:
        raise KeyError(f"unknown front {front!r}; choose from {sorted(FRONTS)} or 'family'/'all'")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    aggs = {
        "arithmetic_mean": Aggregator(AggKind.ARITHMETIC_MEAN),
        "geometric_mean": Aggregator(AggKind.GEOMETRIC_MEAN),
        "lse_softmin": Aggregator(AggKind.LSE_SOFTMIN, lse_k),
    }
    rows = []
    for name in names:
        f = FRONTS[name]
        if resolution != f.resolution:
            f = type(f)(f.sampler, resolution, f.name)
        for label, agg in aggs.items():
            t, where = pareto_argmax(f, agg)
            r1, r2 = f.sampler(t)
            rows.append({"front": name, "aggregator": label, "t_star": t, "r1": r1, "r2": r2, "location": where})
    emit_logs(rows, out / "summary.tsv", SUMMARY_COLUMNS)
    grid = Grid2D(0.01, 1.0, 0.01, 1.0, 100, 100)
    for label, agg in aggs.items():
        emit_logs(
            [{"x": x, "y": y, "value": v} for x, y, v in contour_data(agg, grid)],
            out / f"contour_{label}.tsv",
            ["x", "y", "value"],
        )
    (out / "summary.json").write_text(json.dumps(rows, indent=2) + "\n")
    return rows

"""Command-line entry point: ``ctrlopt {train,ablate,pareto,eval}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config, load_taskset
from .experiments import DEFAULT_ABLATION_TASK, PRESETS, UnknownPresetError, run_ablation, run_pareto_analysis
from .policy import PolicyError, TabularPolicy
from .training import TrainingError, beam_evaluation, run_training, sample_evaluation


def _seed_list(text: str) -> list[int]:
    """``0,1,2`` or ``0-4`` (inclusive) or a mix of both."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_train(args) -> int:
    cfg = load_config(args.config, seed=args.seed, out_dir=args.out, max_steps=args.steps)
    res = run_training(cfg)
    _print_json({"out_dir": str(res.out_dir), "beam": res.beam.as_record(),
                 "sampled": res.sampled.report.as_record(), "band_violation": res.sampled.band_violation})
    return 0


def cmd_ablate(args) -> int:
    presets = list(PRESETS) if args.preset == "all" else args.preset.split(",")
    base = None
    if args.config:
        base = load_config(args.config, seed=args.seeds[0])
    else:
        base = RunConfig(seed=args.seeds[0], task_file=args.task or DEFAULT_ABLATION_TASK)
    if args.task and args.config:
        base = base.with_(task_file=args.task)
    overrides = {} if args.steps is None else {"max_steps": args.steps}
    rows = run_ablation(presets, args.seeds, args.out, base, **overrides)
    cols = ["preset", "seed", "sor", "ssor", "sim", "ri", "sampled_sor", "band_violation"]
    print("\t".join(cols))
    for r in rows:
        print("\t".join(f"{r[c]:.4g}" if isinstance(r[c], float) else str(r[c]) for c in cols))
    print(f"table: {Path(args.out) / 'ablation.tsv'}")
    return 0


def cmd_pareto(args) -> int:
    rows = run_pareto_analysis(args.front, args.out, resolution=args.resolution)
    for r in rows:
        print(f"{r['front']:>9} {r['aggregator']:>16}  t*={r['t_star']:.3f}  {r['location']}")
    return 0


def cmd_eval(args) -> int:
    policy = TabularPolicy.load(args.checkpoint)
    ts = load_taskset(args.task)
    if ts.vocab != policy.vocab:
        raise ConfigError("checkpoint vocabulary does not match the task file")
    cfg = RunConfig(seed=args.seed, task_file=str(args.task), beam_width=args.beam_width,
                    eval_samples=args.samples, gated_ssor=not args.ungated)
    beam = beam_evaluation(policy, ts, cfg)
    sampled = sample_evaluation(policy, ts, cfg, np.random.default_rng([cfg.seed, 1]))
    _print_json({"beam": beam.as_record(), "sampled": sampled.report.as_record(),
                 "band_violation": sampled.band_violation, "shaped": sampled.shaped})
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctrlopt", description="Multi-property group policy optimization on toy sequences.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--steps", type=int, help="override max_steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run ablation presets over seeds")
    p.add_argument("--preset", required=True, help=f"one of {', '.join(PRESETS)}, a comma list, or 'all'")
    p.add_argument("--seeds", required=True, type=_seed_list, help="e.g. 0,1,2 or 0-4")
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--config", type=Path, help="base config; the preset overrides algorithm/aggregation/alignment")
    p.add_argument("--task", help=f"task file (default {DEFAULT_ABLATION_TASK})")
    p.add_argument("--steps", type=int, help="override max_steps")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("pareto", help="aggregator argmax on two-objective fronts")
    p.add_argument("--front", required=True, help="front id, 'family' or 'all'")
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=1000)
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("eval", help="evaluate a saved policy on a task file")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--task", required=True)
    p.add_argument("--seed", type=int, default=0, help="seed for the sampled evaluation")
    p.add_argument("--beam-width", type=int, default=20)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--ungated", action="store_true", help="SSOR without requiring SOR")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PolicyError, UnknownPresetError, TrainingError, KeyError, OSError) as e:
        print(f"ctrlopt: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

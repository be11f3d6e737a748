"""The rollout / advantage / update loop and end-of-run evaluation."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aggregation import Aggregator
from .config import RunConfig, TaskSet
from .domain import TaskSpec, eval_properties
from .evaluation import MetricsReport, evaluate_pairs, make_pair, select_candidate
from .logs import LogWriter
from .optimizer import (
    AdvantageBatch,
    ClipConfig,
    GroupRollout,
    KlController,
    adapt_kl_coef,
    compute_advantages,
    kl_penalty,
    policy_loss,
)
from .policy import TabularPolicy, Trajectory, apply_gradient, beam_search, log_prob, sample_batch
from .shaping import SteepnessConfig, shape_matrix, unaligned_matrix

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def raw_values(trajs: list[Trajectory], task: TaskSpec, ts: TaskSet) -> np.ndarray:
    out = np.full((len(trajs), len(task.properties)), np.nan)
    for i, t in enumerate(trajs):
        if t.candidate.valid:
            out[i] = eval_properties(t.candidate, task, ts.registry)
    return out


def score_matrix(values: np.ndarray, task: TaskSpec, ts: TaskSet, cfg: RunConfig) -> np.ndarray:
    """Per-property rewards; invalid rows (NaN) score 0 everywhere."""
    ok = ~np.isnan(values).any(axis=1)
    filled = np.where(ok[:, None], values, 0.0)
    if cfg.sigmoid_align:
        m = shape_matrix(filled, task, SteepnessConfig(cfg.steepness))
    else:
        m = unaligned_matrix(filled, task, ts.ranges)
    m[~ok] = 0.0
    return m


def build_rollouts(trajs, ts: TaskSet, cfg: RunConfig, reference, agg: Aggregator) -> list[GroupRollout]:
    G = cfg.group_size
    groups = []
    for b in range(cfg.rollout_batch):
        task = ts.tasks[b % len(ts.tasks)]
        chunk = trajs[b * G : (b + 1) * G]
        vals = raw_values(chunk, task, ts)
        mat = score_matrix(vals, task, ts, cfg)
        valid = ~np.isnan(vals).any(axis=1)
        # gdpo never uses this scalar for advantages; it is logged for comparison
        total = np.where(valid, agg.rows(mat), 0.0)
        ref_lp = [log_prob(reference, t.actions) for t in chunk]
        groups.append(GroupRollout(task, chunk, vals, mat, total, ref_lp))
    return groups


def _nanmean(x, axis=0):
    x = np.asarray(x, dtype=float)
    cnt = (~np.isnan(x)).sum(axis=axis)
    s = np.nansum(x, axis=axis)
    return np.where(cnt > 0, s / np.maximum(cnt, 1), np.nan)


def log_columns(ts: TaskSet) -> list[str]:
    names = [p.name for p in ts.tasks[0].properties]
    return (
        ["step", "loss", "mean_reward", "valid_frac"]
        + [f"raw_{n}" for n in names]
        + [f"shaped_{n}" for n in names]
        + ["mean_adv", "kl", "beta", "clip_frac", "wall_time"]
    )


@dataclass
class SampleEval:
    """Rates over many draws from the final policy (one pair per draw)."""

    report: MetricsReport
    band_violation: float
    shaped: dict[str, float]
    raw: dict[str, float]


def sample_evaluation(policy, ts: TaskSet, cfg: RunConfig, rng) -> SampleEval:
    pairs, violations, shaped, raws = [], 0, [], []
    per_task = max(1, cfg.eval_samples // len(ts.tasks))
    for task in ts.tasks:
        trajs = sample_batch(policy, per_task, ts.max_len, rng)
        vals = raw_values(trajs, task, ts)
        shaped.append(score_matrix(vals, task, ts, cfg.with_(sigmoid_align=True)))
        raws.append(vals)
        for t, v in zip(trajs, vals):
            pairs.append(make_pair(t.candidate, task, ts.registry))
            if not t.candidate.valid:
                violations += 1
                continue
            for spec, x in zip(task.properties, v):
                if spec.name in task.stabilize_set:
                    lo, hi = task.bands[spec.name]
                    if not lo <= x <= hi:
                        violations += 1
                        break
    names = ts.tasks[0].names
    sh = np.vstack(shaped).mean(axis=0)
    rw = _nanmean(np.vstack(raws))
    return SampleEval(
        evaluate_pairs(pairs, cfg.gated_ssor),
        violations / len(pairs),
        dict(zip(names, map(float, sh))),
        dict(zip(names, map(float, rw))),
    )


def beam_evaluation(policy, ts: TaskSet, cfg: RunConfig) -> MetricsReport:
    pairs = []
    for task in ts.tasks:
        beam = [h.candidate for h in beam_search(policy, task, cfg.beam_width, ts.max_len)]
        best = select_candidate(task.source, beam, task, ts.registry)
        pairs.append(make_pair(best, task, ts.registry))
    return evaluate_pairs(pairs, cfg.gated_ssor)


@dataclass
class RunResult:
    config: RunConfig
    policy: TabularPolicy
    beam: MetricsReport
    sampled: SampleEval
    initial_reward: float
    final_reward: float
    out_dir: Path | None


def run_training(cfg: RunConfig, out_dir: str | Path | None = None, write: bool = True) -> RunResult:
    ts = cfg.load_tasks()
    out = Path(out_dir or cfg.out_dir)
    rng = np.random.default_rng([cfg.seed, 0])
    eval_rng = np.random.default_rng([cfg.seed, 1])
    policy = TabularPolicy(ts.vocab, cfg.order)
    reference = policy.snapshot("reference")
    agg = Aggregator(cfg.aggregation, cfg.lse_temperature)
    clip = ClipConfig(cfg.clip)
    kl = KlController.start(cfg.kl_initial, cfg.kl_target, cfg.kl_adapt_rate)
    n_groups = cfg.rollout_batch

    writer = None
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.resolved(), indent=2, sort_keys=True) + "\n")
        log_path = out / "train_log.tsv"
        if log_path.exists():
            log_path.unlink()
        writer = LogWriter(log_path, log_columns(ts))

    rewards = []
    try:
        for step in range(cfg.max_steps):
            t0 = time.perf_counter()
            trajs = sample_batch(policy, n_groups * cfg.group_size, ts.max_len, rng)
            rollouts = build_rollouts(trajs, ts, cfg, reference, agg)
            adv_all = compute_advantages(rollouts, cfg.advantage_mode, None, cfg.eps_grp, cfg.eps_bn)
            losses, clipped = [], []
            for _ in range(cfg.epochs):
                order = rng.permutation(n_groups)
                for mb in np.array_split(order, cfg.minibatches):
                    groups = [rollouts[i] for i in mb]
                    if cfg.advantage_mode == "gdpo_sum_bn" and cfg.minibatches > 1:
                        adv = compute_advantages(groups, cfg.advantage_mode, None, cfg.eps_grp, cfg.eps_bn)
                    else:
                        adv = AdvantageBatch([adv_all.values[i] for i in mb], adv_all.mode)
                    loss, grad, stats = policy_loss(groups, adv, policy, reference, clip, kl, cfg.ratio_level)
                    if not math.isfinite(loss):
                        raise TrainingError(f"non-finite loss at step {step}")
                    apply_gradient(policy, grad, cfg.learning_rate)
                    losses.append(loss)
                    clipped.append(stats.clip_frac)
            ctx = np.concatenate([t.contexts for t in trajs])
            observed = kl_penalty(policy, reference, ctx)
            beta = kl.coef
            kl = adapt_kl_coef(kl, observed)

            vals = np.vstack([r.raw_values for r in rollouts])
            shaped = np.vstack([score_matrix(r.raw_values, r.task, ts, cfg.with_(sigmoid_align=True)) for r in rollouts])
            valid = ~np.isnan(vals).any(axis=1)
            mean_reward = float(np.concatenate([r.total_rewards for r in rollouts]).mean())
            rewards.append(mean_reward)
            rec = {
                "step": step,
                "loss": float(np.mean(losses)),
                "mean_reward": mean_reward,
                "valid_frac": float(valid.mean()),
                "mean_adv": float(adv_all.flat().mean()),
                "kl": observed,
                "beta": beta,
                "clip_frac": float(np.mean(clipped)),
                "wall_time": time.perf_counter() - t0,
            }
            raw_mean = _nanmean(vals)
            sh_mean = shaped[valid].mean(axis=0) if valid.any() else np.full(vals.shape[1], np.nan)
            for j, name in enumerate(ts.tasks[0].names):
                rec[f"raw_{name}"] = float(raw_mean[j])
                rec[f"shaped_{name}"] = float(sh_mean[j])
            if writer:
                writer.write(rec)
    except TrainingError as e:
        if writer:
            diag = {c: float("nan") for c in writer.columns}
            diag["step"] = step
            writer.write(diag)
        raise TrainingError(f"{e} (diagnostic row written)") from e
    finally:
        if writer:
            writer.close()

    beam = beam_evaluation(policy, ts, cfg)
    sampled = sample_evaluation(policy, ts, cfg, eval_rng)
    if write:
        policy.save(out / "policy.txt")
        final = {"seed": cfg.seed, **beam.as_record(), "sampled": sampled.report.as_record(),
                 "band_violation": sampled.band_violation, "shaped": sampled.shaped}
        (out / "metrics.json").write_text(json.dumps(final, indent=2, sort_keys=True) + "\n")
    return RunResult(
        cfg, policy, beam, sampled,
        rewards[0] if rewards else float("nan"),
        rewards[-1] if rewards else float("nan"),
        out if write else None,
    )

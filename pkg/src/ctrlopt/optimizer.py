"""Group-relative advantages, the clipped surrogate and the KL-penalised loss."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .aggregation import ADVANTAGE_SOFTMIN
from .domain import TaskSpec
from .policy import Trajectory, logp_grad


class OptimizerError(ValueError):
    pass


class AdvantageMode(str, enum.Enum):
    GRPO = "grpo"
    GDPO_LSE = "gdpo_lse"
    GDPO_SUM_BN = "gdpo_sum_bn"


DEFAULT_EPS = 1e-8


def _normalize(x: np.ndarray, eps: float, axis=None) -> np.ndarray:
    """(x - mean) / (population std + eps); constant slices map to 0."""
    mu = x.mean(axis=axis, keepdims=True)
    sd = x.std(axis=axis, keepdims=True)
    out = (x - mu) / (sd + eps)
    flat = np.ptp(x, axis=axis, keepdims=True) == 0
    return np.where(flat, 0.0, out)


def grpo_advantages(total_rewards, eps: float = DEFAULT_EPS) -> np.ndarray:
    r = np.asarray(total_rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise OptimizerError("a group needs at least two rewards")
    return _normalize(r, eps)


def decoupled_advantages(reward_matrix, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Per-property group normalisation: each column becomes a z-score."""
    m = np.asarray(reward_matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 1:
        raise OptimizerError(f"expected a (G>=2, M>=1) reward matrix, got shape {m.shape}")
    return _normalize(m, eps, axis=0)


def _weights(weights, m: int) -> np.ndarray:
    if weights is None:
        return np.ones(m)
    w = np.asarray(weights, dtype=float)
    if w.shape != (m,):
        raise OptimizerError(f"{w.size} weights for {m} reward columns")
    if np.any(w < 0):
        raise OptimizerError("reward weights must be nonnegative")
    return w


def gdpo_advantages(
    reward_matrix,
    weights=None,
    mode: AdvantageMode | str = AdvantageMode.GDPO_LSE,
    eps_grp: float = DEFAULT_EPS,
    eps_bn: float = DEFAULT_EPS,
    batch_context: Sequence[np.ndarray] | None = None,
) -> np.ndarray:
    """Decoupled advantages for one group.

    ``gdpo_lse`` folds the per-property z-scores with the soft-min
    ``-log sum exp(-A)``. ``gdpo_sum_bn`` takes the weighted sum and then
    normalises over every response in the mini-batch; ``batch_context``
    lists the reward matrices of all groups in that mini-batch (this
    group included).
    """
    mode = AdvantageMode(mode)
    A = decoupled_advantages(reward_matrix, eps_grp)
    if mode is AdvantageMode.GDPO_LSE:
        if weights is not None:
            A = A * _weights(weights, A.shape[1])
        return ADVANTAGE_SOFTMIN.rows(A)
    if mode is AdvantageMode.GDPO_SUM_BN:
        if not batch_context:
            raise OptimizerError("sum_bn mode needs the mini-batch reward matrices")
        w = _weights(weights, A.shape[1])
        summed = [decoupled_advantages(m, eps_grp) @ w for m in batch_context]
        pool = np.concatenate(summed)
        mu, sd = pool.mean(), pool.std()
        if np.ptp(pool) == 0:
            return np.zeros(A.shape[0])
        return (A @ w - mu) / (sd + eps_bn)
    raise OptimizerError(f"{mode.value} is not a decoupled mode")


@dataclass
class GroupRollout:
    task: TaskSpec | None
    trajectories: list[Trajectory]
    raw_values: np.ndarray  # (G, M); NaN rows for invalid responses
    reward_matrix: np.ndarray  # (G, M) shaped per-property rewards
    total_rewards: np.ndarray  # (G,)
    logp_ref: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        G = len(self.trajectories)
        if G < 2:
            raise OptimizerError("a group needs at least two responses")
        if self.reward_matrix.shape[0] != G or self.total_rewards.shape != (G,):
            raise OptimizerError("reward arrays do not match the group size")

    @property
    def logp_old(self) -> list[np.ndarray]:
        return [t.logp for t in self.trajectories]

    @property
    def valid(self) -> np.ndarray:
        return np.array([t.candidate.valid for t in self.trajectories])


@dataclass(frozen=True)
class AdvantageBatch:
    values: list[np.ndarray]  # one (G,) array per group
    mode: AdvantageMode = AdvantageMode.GRPO
    eps_grp: float = DEFAULT_EPS
    eps_bn: float = DEFAULT_EPS

    def __post_init__(self):
        if not (self.eps_grp > 0 and self.eps_bn > 0):
            raise OptimizerError("epsilons must be positive")

    def flat(self) -> np.ndarray:
        return np.concatenate(self.values) if self.values else np.zeros(0)


def compute_advantages(
    rollouts: Sequence[GroupRollout],
    mode: AdvantageMode | str,
    weights=None,
    eps_grp: float = DEFAULT_EPS,
    eps_bn: float = DEFAULT_EPS,
) -> AdvantageBatch:
    mode = AdvantageMode(mode)
    if mode is AdvantageMode.GRPO:
        vals = [grpo_advantages(r.total_rewards, eps_grp) for r in rollouts]
    elif mode is AdvantageMode.GDPO_LSE:
        vals = [gdpo_advantages(r.reward_matrix, weights, mode, eps_grp, eps_bn) for r in rollouts]
    else:
        if not rollouts:
            raise OptimizerError("empty mini-batch")
        w = _weights(weights, rollouts[0].reward_matrix.shape[1])
        summed = [decoupled_advantages(r.reward_matrix, eps_grp) @ w for r in rollouts]
        pool = np.concatenate(summed)
        if np.ptp(pool) == 0:
            vals = [np.zeros_like(s) for s in summed]
        else:
            mu, sd = pool.mean(), pool.std()
            vals = [(s - mu) / (sd + eps_bn) for s in summed]
    return AdvantageBatch(vals, mode, eps_grp, eps_bn)


# ---------------------------------------------------------------------------
# surrogate, KL and loss


@dataclass(frozen=True)
class ClipConfig:
    eps_clip: float = 0.2

    def __post_init__(self):
        if not 0 < self.eps_clip < 1:
            raise OptimizerError("eps_clip must lie in (0, 1)")


def clipped_surrogate(rho, A, clip: ClipConfig = ClipConfig()):
    rho = np.asarray(rho, dtype=float)
    A = np.asarray(A, dtype=float)
    out = np.minimum(rho * A, np.clip(rho, 1 - clip.eps_clip, 1 + clip.eps_clip) * A)
    return out if out.ndim else float(out)


def _kl_rows(policy, reference, contexts):
    lp = policy.log_probs(contexts)[:, 1:]  # drop the never-emitted <bos> column
    lq = reference.log_probs(contexts)[:, 1:]
    p = np.exp(lp)
    kl = (p * (lp - lq)).sum(axis=1)
    return np.maximum(kl, 0.0), p, lp - lq


def _check_vocab(policy, reference):
    if policy.vocab != reference.vocab or policy.order != reference.order:
        raise OptimizerError("policy and reference do not share a vocabulary/context layout")


def kl_penalty(policy, reference, contexts, weights=None) -> float:
    """Exact KL(policy || reference) per visited context, averaged."""
    _check_vocab(policy, reference)
    contexts = np.asarray(contexts, dtype=np.int64)
    if contexts.size == 0:
        return 0.0
    kl, _, _ = _kl_rows(policy, reference, contexts)
    if weights is None:
        return float(kl.mean())
    return float(np.dot(weights, kl) / np.sum(weights))


@dataclass(frozen=True)
class KlController:
    coef: float = 0.05
    target: float = 1.0
    initial: float = 0.05
    adapt_rate: float = 0.1
    lo: float = 1e-5
    hi: float = 10.0

    def __post_init__(self):
        if not self.coef > 0:
            raise OptimizerError("KL coefficient must be positive")

    @classmethod
    def start(cls, initial: float = 0.05, target: float = 1.0, adapt_rate: float = 0.1) -> "KlController":
        return cls(coef=initial, target=target, initial=initial, adapt_rate=adapt_rate)


def adapt_kl_coef(ctrl: KlController, observed_kl: float) -> KlController:
    """Multiplicative controller with a 1.5x dead band around the target."""
    if observed_kl < 0:
        raise OptimizerError("observed KL must be nonnegative")
    coef = ctrl.coef
    if observed_kl > 1.5 * ctrl.target:
        coef *= 1 + ctrl.adapt_rate
    elif observed_kl < ctrl.target / 1.5:
        coef /= 1 + ctrl.adapt_rate
    return replace(ctrl, coef=min(max(coef, ctrl.lo), ctrl.hi))


@dataclass(frozen=True)
class LossStats:
    loss: float
    surrogate: float
    kl: float
    clip_frac: float


def _flatten(rollouts: Sequence[GroupRollout], advantages: AdvantageBatch):
    if len(advantages.values) != len(rollouts):
        raise OptimizerError("advantages do not align with rollouts")
    ctx, act, old, adv, w, seq = [], [], [], [], [], []
    n_resp = sum(len(r.trajectories) for r in rollouts)
    k = 0
    for r, a in zip(rollouts, advantages.values):
        if len(a) != len(r.trajectories):
            raise OptimizerError("advantages do not align with rollouts")
        for traj, ai in zip(r.trajectories, a):
            L = len(traj)
            if traj.logp is None or len(traj.logp) != L:
                raise OptimizerError("missing rollout-time log-probabilities")
            ctx.append(traj.contexts)
            act.append(traj.actions)
            old.append(traj.logp)
            adv.append(np.full(L, ai))
            w.append(np.full(L, 1.0 / (n_resp * L)))
            seq.append(np.full(L, k))
            k += 1
    cat = np.concatenate
    return cat(ctx), cat(act), cat(old), cat(adv), cat(w), cat(seq), n_resp


def policy_loss(
    rollouts: Sequence[GroupRollout],
    advantages: AdvantageBatch,
    policy,
    reference,
    clip: ClipConfig = ClipConfig(),
    kl: KlController | float = KlController(),
    level: str = "token",
) -> tuple[float, np.ndarray, LossStats]:
    """Clipped-surrogate loss plus beta * KL, with its exact gradient.

    ``level="token"`` uses per-token ratios averaged over each response's
    length and then over responses; ``level="sequence"`` uses one ratio
    per response. The KL term is averaged over visited tokens with the
    same length weighting.
    """
    _check_vocab(policy, reference)
    beta = kl.coef if isinstance(kl, KlController) else float(kl)
    ctx, act, old, adv, w, seq, n_resp = _flatten(rollouts, advantages)
    lp_all = policy.log_probs(ctx)
    lp = lp_all[np.arange(len(act)), act]
    lo, hi = 1 - clip.eps_clip, 1 + clip.eps_clip

    if level == "token":
        rho = np.exp(lp - old)
        unclipped = rho * adv
        clipped = np.clip(rho, lo, hi) * adv
        active = unclipped <= clipped
        sur = float(np.dot(w, np.minimum(unclipped, clipped)))
        coeff = -(w * np.where(active, rho * adv, 0.0))
        clip_frac = float(np.dot(w, ~active) * 1.0)
    elif level == "sequence":
        log_ratio = np.bincount(seq, weights=lp - old, minlength=n_resp)
        rho_seq = np.exp(log_ratio)
        a_seq = np.zeros(n_resp)
        a_seq[seq] = adv
        unclipped = rho_seq * a_seq
        clipped = np.clip(rho_seq, lo, hi) * a_seq
        active = unclipped <= clipped
        sur = float(np.minimum(unclipped, clipped).sum() / n_resp)
        coeff = -np.where(active, rho_seq * a_seq, 0.0)[seq] / n_resp
        clip_frac = float((~active).mean())
    else:
        raise OptimizerError(f"unknown ratio level {level!r}")

    grad = logp_grad(policy, ctx, act, coeff)

    kl_val = 0.0
    if beta:
        kl_t, p, diff = _kl_rows(policy, reference, ctx)
        kl_val = float(np.dot(w, kl_t))
        # d KL(p||q) / d z = p * (log p - log q - KL)
        g = np.zeros_like(lp_all)
        g[:, 1:] = p * (diff - kl_t[:, None])
        kl_grad = np.zeros_like(policy.logits)
        np.add.at(kl_grad, ctx, w[:, None] * g)
        grad = grad + beta * kl_grad
    else:
        kl_val = kl_penalty(policy, reference, ctx, w) if len(ctx) else 0.0

    loss = -sur + beta * kl_val
    return loss, grad, LossStats(loss, sur, kl_val, clip_frac)

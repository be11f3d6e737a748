"""Sigmoid alignment of raw property values into (0, 1) preference scores."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .domain import DomainError, TaskSpec


def sigmoid(x):
    """Numerically stable logistic function (scalar or array)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SteepnessConfig:
    proportionality: float = 1.0

    def __post_init__(self):
        if not self.proportionality > 0:
            raise DomainError("steepness proportionality must be positive")


def steepness(delta: float, cfg: SteepnessConfig = SteepnessConfig()) -> float:
    """Margin-adaptive slope: moving one margin past the target lands on sigmoid(5)."""
    if not delta > 0:
        raise DomainError(f"margin must be positive, got {delta!r}")
    return cfg.proportionality * 5.0 / delta


def improvement_score(v, target, alpha, direction=1):
    return sigmoid(alpha * direction * (np.asarray(v, dtype=float) - target))


def stability_score(v, lower, upper, alpha):
    """Double sigmoid: a plateau on [lower, upper] with exponential fall-off outside."""
    if not lower < upper:
        raise DomainError(f"empty stability band [{lower}, {upper}]")
    v = np.asarray(v, dtype=float)
    return sigmoid(alpha * (upper - v)) * sigmoid(alpha * (v - lower))


def improvement_score_grad(v, target, alpha, direction=1):
    s = improvement_score(v, target, alpha, direction)
    return alpha * direction * s * (1.0 - s)


def stability_score_grad(v, lower, upper, alpha):
    v = np.asarray(v, dtype=float)
    a = sigmoid(alpha * (upper - v))
    b = sigmoid(alpha * (v - lower))
    return alpha * a * b * ((1.0 - b) - (1.0 - a))


@dataclass(frozen=True)
class ShapedScores:
    per_property: Mapping[str, float]
    task: TaskSpec

    def vector(self) -> np.ndarray:
        return np.array([self.per_property[n] for n in self.task.names])


def shape_rewards(
    values: Sequence[float], task: TaskSpec, cfg: SteepnessConfig = SteepnessConfig()
) -> ShapedScores:
    if len(values) != len(task.properties):
        raise DomainError(f"{len(values)} values for {len(task.properties)} properties")
    out = {}
    for v, spec in zip(values, task.properties):
        alpha = steepness(spec.delta, cfg)
        if spec.name in task.improve_set:
            out[spec.name] = float(improvement_score(v, task.targets[spec.name], alpha, spec.direction))
        else:
            lo, hi = task.bands[spec.name]
            out[spec.name] = float(stability_score(v, lo, hi, alpha))
    return ShapedScores(out, task)


def shape_matrix(values: np.ndarray, task: TaskSpec, cfg: SteepnessConfig = SteepnessConfig()) -> np.ndarray:
    """Vectorised :func:`shape_rewards` over a (G, M) block of raw values."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    for j, spec in enumerate(task.properties):
        alpha = steepness(spec.delta, cfg)
        if spec.name in task.improve_set:
            out[:, j] = improvement_score(values[:, j], task.targets[spec.name], alpha, spec.direction)
        else:
            lo, hi = task.bands[spec.name]
            out[:, j] = stability_score(values[:, j], lo, hi, alpha)
    return out


def unaligned_matrix(values: np.ndarray, task: TaskSpec, ranges: Sequence[tuple[float, float]]) -> np.ndarray:
    """Raw-scale rewards used when sigmoid alignment is switched off.

    Every property is scored by its oriented distance from the worst end
    of its declared oracle range, in native units. Scores stay
    nonnegative (so the geometric mean is defined) but keep each
    property's natural scale, which is what alignment removes.
    """
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    for j, spec in enumerate(task.properties):
        lo, hi = ranges[j]
        out[:, j] = values[:, j] - lo if spec.direction > 0 else hi - values[:, j]
    return np.clip(out, 0.0, None)


__all__ = [
    "ShapedScores",
    "SteepnessConfig",
    "improvement_score",
    "improvement_score_grad",
    "shape_matrix",
    "shape_rewards",
    "sigmoid",
    "stability_score",
    "stability_score_grad",
    "steepness",
    "unaligned_matrix",
]

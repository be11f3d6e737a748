"""Scalarisation of per-property scores, plus the 2-D front geometry study."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np


class AggregationError(ValueError):
    pass


class AggKind(str, enum.Enum):
    ARITHMETIC_MEAN = "arithmetic_mean"
    GEOMETRIC_MEAN = "geometric_mean"
    LSE_SOFTMIN = "lse_softmin"


def _as_nonempty(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise AggregationError("cannot aggregate an empty vector")
    return v


def arithmetic_mean(scores) -> float:
    v = _as_nonempty(scores)
    return float(v.sum() / v.size)


def geometric_mean(scores) -> float:
    v = _as_nonempty(scores)
    if np.any(v < 0):
        raise AggregationError("geometric mean is undefined for negative entries")
    if np.any(v == 0):
        return 0.0
    g = math.exp(np.log(v).sum() / v.size)
    # the exact value lies in [min, AM]; keep rounding from crossing either end
    return float(min(max(g, v.min()), v.sum() / v.size))


def lse_softmin(values, k: float = 1.0, scaled: bool = True) -> float:
    """Smooth minimum ``-(1/k) log sum exp(-k x)`` (max-shifted).

    ``scaled=False`` drops the 1/k prefactor; with k=1 both coincide.
    """
    v = _as_nonempty(values)
    if not k > 0:
        raise AggregationError(f"temperature must be positive, got {k!r}")
    m = v.min()
    s = np.exp(-k * (v - m)).sum()
    # m - log(s)/k stays within [m - log(N)/k, m] after rounding, since 1 <= s <= N
    return float(m - math.log(s) / k if scaled else k * m - math.log(s))


def gm_gradient(scores) -> np.ndarray:
    v = _as_nonempty(scores)
    if np.any(v <= 0):
        raise AggregationError("geometric-mean gradient needs strictly positive entries")
    return geometric_mean(v) / (v.size * v)


def lse_gradient(values, k: float = 1.0) -> np.ndarray:
    """Gradient of the scaled soft-min: softmax of ``-k x``."""
    v = _as_nonempty(values)
    if not k > 0:
        raise AggregationError(f"temperature must be positive, got {k!r}")
    e = np.exp(-k * (v - v.min()))
    return e / e.sum()


@dataclass(frozen=True)
class Aggregator:
    kind: AggKind = AggKind.GEOMETRIC_MEAN
    temperature: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", AggKind(self.kind))
        if not self.temperature > 0:
            raise AggregationError("temperature must be positive")

    def __call__(self, values) -> float:
        if self.kind is AggKind.ARITHMETIC_MEAN:
            return arithmetic_mean(values)
        if self.kind is AggKind.GEOMETRIC_MEAN:
            return geometric_mean(values)
        return lse_softmin(values, self.temperature)

    def rows(self, matrix: np.ndarray) -> np.ndarray:
        """Aggregate each row of a (G, M) matrix."""
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[1] == 0:
            raise AggregationError(f"expected a (G, M) matrix with M >= 1, got shape {m.shape}")
        if self.kind is AggKind.ARITHMETIC_MEAN:
            return m.mean(axis=1)
        if self.kind is AggKind.GEOMETRIC_MEAN:
            if np.any(m < 0):
                raise AggregationError("geometric mean is undefined for negative entries")
            with np.errstate(divide="ignore"):
                out = np.exp(np.log(m).mean(axis=1))
            out = np.clip(out, m.min(axis=1), m.mean(axis=1))
            return np.where(np.any(m == 0, axis=1), 0.0, out)
        k = self.temperature
        mn = m.min(axis=1, keepdims=True)
        s = np.exp(-k * (m - mn)).sum(axis=1)
        return mn[:, 0] - np.log(s) / k


# the soft-min used for decoupled advantages: k = 1, no prefactor
ADVANTAGE_SOFTMIN = Aggregator(AggKind.LSE_SOFTMIN, 1.0)


# ---------------------------------------------------------------------------
# front geometry


@dataclass(frozen=True)
class ParetoFront:
    sampler: Callable[[float], tuple[float, float]]
    resolution: int = 1000
    name: str = ""

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        ts = np.linspace(0.0, 1.0, self.resolution + 1)
        pts = np.array([self.sampler(float(t)) for t in ts], dtype=float)
        return ts, pts


def _power_front(p: float) -> Callable[[float], tuple[float, float]]:
    # (1 - r1^(1/p))^p traces a curve bowing toward the origin for p > 1
    return lambda t: (t, (1.0 - t ** (1.0 / p)) ** p)


# Non-convex (bowed-in) two-objective fronts. p = 2 is (1 - sqrt(r1))^2.
FRONT_FAMILY: dict[str, ParetoFront] = {
    f"power{p:g}": ParetoFront(_power_front(p), 1000, f"power{p:g}") for p in (1.5, 2.0, 3.0, 4.0)
}
SYMMETRIC_LINEAR = ParetoFront(lambda t: (t, 1.0 - t), 1000, "linear")
FRONTS = {**FRONT_FAMILY, "linear": SYMMETRIC_LINEAR}


def pareto_argmax(front: ParetoFront, agg: Aggregator) -> tuple[float, str]:
    """Grid argmax of ``agg`` along the front and whether it sits at an end."""
    if front.resolution < 100:
        raise AggregationError("front resolution must be at least 100")
    ts, pts = front.points()
    if np.ptp(pts, axis=0).max() == 0:
        raise AggregationError("degenerate front: sampler output is constant")
    vals = agg.rows(pts)
    i = int(np.argmax(vals))
    step = 1.0 / front.resolution
    t_star = float(ts[i])
    where = "boundary" if (t_star <= step + 1e-12 or t_star >= 1.0 - step - 1e-12) else "interior"
    return t_star, where


@dataclass(frozen=True)
class Grid2D:
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    nx: int = 101
    ny: int = 101


def contour_data(agg: Aggregator, grid: Grid2D) -> Iterator[tuple[float, float, float]]:
    """Row-major (x, y, value) rows over ``grid``; y varies slowest."""
    if agg.kind is AggKind.GEOMETRIC_MEAN and min(grid.x_lo, grid.y_lo) < 0:
        raise AggregationError("geometric mean requested on a grid with negative coordinates")
    xs = np.linspace(grid.x_lo, grid.x_hi, grid.nx)
    ys = np.linspace(grid.y_lo, grid.y_hi, grid.ny)
    for y in ys:
        pts = np.column_stack([xs, np.full_like(xs, y)])
        for x, v in zip(xs, agg.rows(pts)):
            yield float(x), float(y), float(v)

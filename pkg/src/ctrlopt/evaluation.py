"""Success rates, relative improvement, similarity and beam candidate selection."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .domain import Candidate, DomainError, OracleRegistry, TaskSpec, eval_properties, fingerprint, tanimoto

log = logging.getLogger(__name__)

RI_FLOOR = 1e-8


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class EvalPair:
    source: Candidate
    generated: Candidate
    task: TaskSpec
    gen_values: np.ndarray | None  # None when the generated candidate is invalid

    @property
    def src_values(self) -> np.ndarray:
        return np.asarray(self.task.source_values, dtype=float)


def make_pair(generated: Candidate, task: TaskSpec, registry: OracleRegistry) -> EvalPair:
    vals = eval_properties(generated, task, registry) if generated.valid else None
    return EvalPair(task.source, generated, task, vals)


@dataclass(frozen=True)
class MetricsReport:
    sor: float
    ssor: float
    sim: float
    ri: float
    n: int
    n_valid: int

    def as_record(self) -> dict:
        return asdict(self)


def _nonempty(pairs):
    if not pairs:
        raise MetricError("no evaluation pairs")


def sor_success(task: TaskSpec, src: Sequence[float], gen: Sequence[float] | None) -> bool:
    """Improve set moved at least one margin the right way; stabilize set stayed within one margin."""
    if gen is None:
        return False
    for spec, s, g in zip(task.properties, src, gen):
        if spec.name in task.improve_set:
            if not spec.direction * (g - s) >= spec.delta:
                return False
        elif not abs(g - s) <= spec.delta:
            return False
    return True


def strict_success(task: TaskSpec, gen: Sequence[float] | None) -> bool:
    if gen is None:
        return False
    return all(spec.direction * g >= spec.direction * spec.theta for spec, g in zip(task.properties, gen))


def relative_improvement(task: TaskSpec, src: Sequence[float], gen: Sequence[float] | None) -> float:
    if gen is None:
        return 0.0
    terms = []
    for spec, s, g in zip(task.properties, src, gen):
        if spec.name not in task.improve_set:
            continue
        denom = abs(s)
        if denom < RI_FLOOR:
            log.info("zero baseline for %s in task %s; RI denominator floored", spec.name, task.name)
            denom = RI_FLOOR
        terms.append(spec.direction * (g - s) / denom)
    return math.fsum(terms) / len(terms) if terms else 0.0


def sor(pairs: Sequence[EvalPair]) -> float:
    _nonempty(pairs)
    return sum(sor_success(p.task, p.src_values, p.gen_values) for p in pairs) / len(pairs)


def ssor(pairs: Sequence[EvalPair], gated: bool = True) -> float:
    """Strict rate: every property meets its threshold (and, by default, SOR holds)."""
    _nonempty(pairs)
    hits = 0
    for p in pairs:
        ok = strict_success(p.task, p.gen_values)
        if gated:
            ok = ok and sor_success(p.task, p.src_values, p.gen_values)
        hits += ok
    return hits / len(pairs)


def ri(pairs: Sequence[EvalPair]) -> float:
    _nonempty(pairs)
    # correctly rounded sums keep every metric independent of pair order
    return math.fsum(relative_improvement(p.task, p.src_values, p.gen_values) for p in pairs) / len(pairs)


def similarity_avg(pairs: Sequence[EvalPair]) -> float:
    _nonempty(pairs)
    sims = [tanimoto(fingerprint(p.source), fingerprint(p.generated)) for p in pairs if p.generated.valid]
    if not sims:
        raise MetricError("no valid generated candidates to compare")
    return math.fsum(sims) / len(sims)


def evaluate_pairs(pairs: Sequence[EvalPair], gated_ssor: bool = True) -> MetricsReport:
    _nonempty(pairs)
    n_valid = sum(p.generated.valid for p in pairs)
    sim = similarity_avg(pairs) if n_valid else 0.0
    return MetricsReport(
        sor=sor(pairs), ssor=ssor(pairs, gated_ssor), sim=sim, ri=ri(pairs), n=len(pairs), n_valid=n_valid
    )


def select_candidate(
    source: Candidate, beam: Sequence[Candidate], task: TaskSpec, registry: OracleRegistry
) -> Candidate:
    """Pick the best beam entry for ``task``.

    Prefer candidates meeting every margin condition; among those (or,
    if there are none, among all valid candidates) take the largest
    relative improvement. Earlier beam entries win ties.
    """
    if not beam:
        raise MetricError("empty beam")
    if source.tokens != task.source.tokens:
        raise DomainError("source does not match the task")
    src = task.source_values
    best_ok, best_any = None, None
    for cand in beam:
        if not cand.valid:
            continue
        gen = eval_properties(cand, task, registry)
        score = relative_improvement(task, src, gen)
        if best_any is None or score > best_any[0]:
            best_any = (score, cand)
        if sor_success(task, src, gen) and (best_ok is None or score > best_ok[0]):
            best_ok = (score, cand)
    if best_ok is not None:
        return best_ok[1]
    if best_any is not None:
        return best_any[1]
    return beam[0]

"""Properties, tasks, synthetic oracles and fingerprint similarity.

Candidates are token sequences over a small vocabulary. A lightweight
grammar decides validity (it plays the role of "does this parse as a
molecule"), and every property is a pure function of the token tuple.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

BOS = "<bos>"
EOS = "<eos>"
BOND = "="
SENTINELS = (BOS, EOS)

DEFAULT_FP_WIDTH = 2048


class DomainError(ValueError):
    """Raised for malformed properties, tasks or candidates."""


class UnknownOracleError(DomainError, KeyError):
    pass


# ---------------------------------------------------------------------------
# property and candidate types


@dataclass(frozen=True)
class PropertySpec:
    name: str
    direction: int
    delta: float
    theta: float
    oracle_id: str

    def __post_init__(self):
        if self.direction not in (1, -1):
            raise DomainError(f"{self.name}: direction must be +1 or -1, got {self.direction!r}")
        if not self.delta > 0:
            raise DomainError(f"{self.name}: delta must be positive, got {self.delta!r}")
        if not math.isfinite(self.theta):
            raise DomainError(f"{self.name}: theta must be finite")


def grammar_ok(tokens: Sequence[str]) -> bool:
    """Toy well-formedness rule: nonempty, no sentinels, bonds only between atoms."""
    if not tokens:
        return False
    if any(t in SENTINELS for t in tokens):
        return False
    if tokens[0] == BOND or tokens[-1] == BOND:
        return False
    return all(not (a == BOND and b == BOND) for a, b in zip(tokens, tokens[1:]))


@dataclass(frozen=True)
class Fingerprint:
    bits: int
    width: int = DEFAULT_FP_WIDTH

    def __post_init__(self):
        _check_width(self.width)
        if self.bits < 0 or self.bits >> self.width:
            raise DomainError("fingerprint bits exceed declared width")

    def on_bits(self) -> list[int]:
        return [i for i in range(self.width) if (self.bits >> i) & 1]

    @classmethod
    def from_indices(cls, indices: Iterable[int], width: int = DEFAULT_FP_WIDTH) -> "Fingerprint":
        bits = 0
        for i in indices:
            bits |= 1 << int(i)
        return cls(bits, width)


@dataclass(eq=False)
class Candidate:
    """A generated (or source) sequence.

    ``props`` and ``fp`` are caches filled in by :func:`eval_properties`
    and :func:`fingerprint`; the token content itself never changes.
    """

    tokens: tuple[str, ...]
    valid: bool
    props: np.ndarray | None = None
    fp: Fingerprint | None = None
    _props_key: tuple[str, ...] | None = field(default=None, repr=False)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str], max_len: int | None = None) -> "Candidate":
        tokens = tuple(tokens)
        if max_len is not None and len(tokens) > max_len:
            raise DomainError(f"candidate length {len(tokens)} exceeds max_len {max_len}")
        return cls(tokens=tokens, valid=grammar_ok(tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def __repr__(self) -> str:
        return f"Candidate({''.join(self.tokens)!r}, valid={self.valid})"


# ---------------------------------------------------------------------------
# oracles


@dataclass(frozen=True)
class Oracle:
    fn: Callable[[tuple[str, ...]], float]
    lo: float
    hi: float


def _frac(symbols: frozenset[str]) -> Oracle:
    def f(tokens):
        if not tokens:
            return 0.0
        return sum(1 for t in tokens if t in symbols) / len(tokens)

    return Oracle(f, 0.0, 1.0)


def _stable_unit(tokens: tuple[str, ...]) -> float:
    h = hashlib.blake2b("\x1f".join(tokens).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(h, "big") / 2.0**64


class OracleRegistry:
    """Read-only map from oracle id to a pure property function.

    Base ids are ``frac_X`` (share of token X; ``frac_XY`` counts either
    of several single-character tokens), ``neg_frac_X``, ``len_norm`` and
    ``hash_smooth``. Two combinators are understood, so task files can
    declare conflict pairs and rescaled objectives without code:

    * ``1-<id>``: complement, e.g. ``1-frac_A``
    * ``<k>*<id>``: scale by a positive constant, e.g. ``10*frac_B``
    """

    def __init__(self, symbols: Sequence[str], max_len: int):
        if max_len < 1:
            raise DomainError("max_len must be >= 1")
        self.symbols = tuple(s for s in symbols if s not in SENTINELS)
        self.max_len = max_len
        base: dict[str, Oracle] = {}
        for s in self.symbols:
            base[f"frac_{s}"] = _frac(frozenset([s]))
        base["len_norm"] = Oracle(lambda t: len(t) / max_len, 0.0, 1.0)
        base["hash_smooth"] = Oracle(
            lambda t: 0.5 * (1.0 + math.sin(2.0 * math.pi * _stable_unit(t))) if t else 0.0, 0.0, 1.0
        )
        self._base = base

    def resolve(self, oracle_id: str) -> Oracle:
        oid = oracle_id.strip()
        if oid in self._base:
            return self._base[oid]
        if oid.startswith("frac_") and len(oid) > 6 and all(c in self.symbols for c in oid[5:]):
            return _frac(frozenset(oid[5:]))
        if oid.startswith("neg_frac_"):
            return self._complement(self.resolve(oid[len("neg_"):]))
        if oid.startswith("1-"):
            return self._complement(self.resolve(oid[2:]))
        if "*" in oid:
            k_str, inner = oid.split("*", 1)
            try:
                k = float(k_str)
            except ValueError:
                raise UnknownOracleError(oracle_id) from None
            if not k > 0:
                raise UnknownOracleError(oracle_id)
            o = self.resolve(inner)
            return Oracle(lambda t, f=o.fn: k * f(t), k * o.lo, k * o.hi)
        raise UnknownOracleError(oracle_id)

    @staticmethod
    def _complement(o: Oracle) -> Oracle:
        return Oracle(lambda t, f=o.fn: 1.0 - f(t), 1.0 - o.hi, 1.0 - o.lo)

    def __contains__(self, oracle_id: str) -> bool:
        try:
            self.resolve(oracle_id)
        except UnknownOracleError:
            return False
        return True

    def evaluate(self, oracle_id: str, tokens: Sequence[str]) -> float:
        return float(self.resolve(oracle_id).fn(tuple(tokens)))


# ---------------------------------------------------------------------------
# tasks


def partition_properties(
    source_values: Sequence[float], specs: Sequence[PropertySpec]
) -> tuple[frozenset[str], frozenset[str]]:
    """Split properties into (improve, stabilize) by comparing to theta.

    A value exactly at theta counts as already satisfied.
    """
    if len(source_values) != len(specs):
        raise DomainError(f"{len(source_values)} values for {len(specs)} property specs")
    improve, stabilize = set(), set()
    for v, spec in zip(source_values, specs):
        if spec.direction * v < spec.direction * spec.theta:
            improve.add(spec.name)
        else:
            stabilize.add(spec.name)
    return frozenset(improve), frozenset(stabilize)


@dataclass(frozen=True)
class TaskSpec:
    source: Candidate
    properties: tuple[PropertySpec, ...]
    source_values: tuple[float, ...]
    improve_set: frozenset[str]
    stabilize_set: frozenset[str]
    targets: Mapping[str, float]
    bands: Mapping[str, tuple[float, float]]
    name: str = "task"

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.properties)

    def spec(self, name: str) -> PropertySpec:
        for p in self.properties:
            if p.name == name:
                return p
        raise KeyError(name)


def make_task(
    source: Candidate | Sequence[str],
    specs: Sequence[PropertySpec],
    registry: OracleRegistry,
    name: str = "task",
) -> TaskSpec:
    if not isinstance(source, Candidate):
        source = Candidate.from_tokens(source)
    if not source.valid:
        raise DomainError(f"source sequence {source.tokens!r} is not grammatical")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise DomainError("duplicate property names")
    for s in specs:
        registry.resolve(s.oracle_id)
    values = tuple(registry.evaluate(s.oracle_id, source.tokens) for s in specs)
    improve, stabilize = partition_properties(values, specs)
    targets, bands = {}, {}
    for v, s in zip(values, specs):
        if s.name in improve:
            targets[s.name] = v + s.direction * s.delta
        else:
            bands[s.name] = (v - s.delta, v + s.delta)
    task = TaskSpec(
        source=source,
        properties=tuple(specs),
        source_values=values,
        improve_set=improve,
        stabilize_set=stabilize,
        targets=targets,
        bands=bands,
        name=name,
    )
    eval_properties(source, task, registry)
    fingerprint(source)
    return task


def eval_properties(cand: Candidate, task: TaskSpec, registry: OracleRegistry) -> np.ndarray:
    """Property vector ordered like ``task.properties``; cached on ``cand``."""
    if not cand.valid:
        raise DomainError(f"cannot evaluate properties of invalid candidate {cand!r}")
    key = tuple(p.oracle_id for p in task.properties)
    if cand.props is not None and cand._props_key == key:
        return cand.props
    vals = np.array([registry.evaluate(oid, cand.tokens) for oid in key], dtype=float)
    vals.flags.writeable = False
    cand.props = vals
    cand._props_key = key
    return vals


# ---------------------------------------------------------------------------
# fingerprints


def _check_width(width: int) -> None:
    if width < 1 or width & (width - 1):
        raise DomainError(f"fingerprint width must be a power of two, got {width}")


def bigram_bit(a: str, b: str, width: int) -> int:
    digest = hashlib.blake2b(f"{a}\x1f{b}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % width


def fingerprint(cand: Candidate, width: int = DEFAULT_FP_WIDTH) -> Fingerprint:
    """Hashed-bigram bit vector; one bit per adjacent token pair."""
    _check_width(width)
    if not cand.valid:
        raise DomainError(f"cannot fingerprint invalid candidate {cand!r}")
    if cand.fp is not None and cand.fp.width == width:
        return cand.fp
    bits = 0
    for a, b in zip(cand.tokens, cand.tokens[1:]):
        bits |= 1 << bigram_bit(a, b, width)
    fp = Fingerprint(bits, width)
    cand.fp = fp
    return fp


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|a & b| / |a | b|; two empty fingerprints count as identical (1.0)."""
    if a.width != b.width:
        raise DomainError(f"fingerprint widths differ: {a.width} vs {b.width}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union

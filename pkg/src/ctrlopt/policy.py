"""A tabular autoregressive policy with exact log-probabilities and gradients.

The next-token distribution is a softmax over one row of a logits table,
selected by the previous one or two tokens. That is small enough that
KL divergences, beam enumeration and parameter gradients are all exact.

Checkpoint format (plain text, one header block then one row per context)::

    # ctrlopt-policy 1
    order 2
    version 17
    vocab <bos> <eos> A B C ...
    rows 144
    <V floats, '%.17g', space separated>
    ...

Rows are in context-index order; for order 2 the index of the context
``(t[-2], t[-1])`` is ``t[-2] * V + t[-1]`` with ``<bos>`` padding.
"""

from __future__ import annotations

import heapq
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .domain import BOND, BOS, EOS, Candidate, TaskSpec

FORMAT_TAG = "# ctrlopt-policy 1"
DEFAULT_SYMBOLS = (BOS, EOS, "A", "B", "C", "D", "E", "F", "G", "H", "I", BOND)


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    symbols: tuple[str, ...] = DEFAULT_SYMBOLS

    def __post_init__(self):
        if len(self.symbols) < 3:
            raise PolicyError("vocabulary needs at least 3 symbols")
        if len(set(self.symbols)) != len(self.symbols):
            raise PolicyError("duplicate vocabulary symbols")
        if self.symbols[0] != BOS or self.symbols[1] != EOS:
            raise PolicyError(f"vocabulary must start with {BOS!r}, {EOS!r}")

    @classmethod
    def of_size(cls, size: int) -> "Vocabulary":
        if size < 3:
            raise PolicyError("vocabulary needs at least 3 symbols")
        body = [chr(ord("A") + i) for i in range(size - 2)]
        return cls((BOS, EOS, *body))

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def bos(self) -> int:
        return 0

    @property
    def eos(self) -> int:
        return 1

    @property
    def body(self) -> tuple[str, ...]:
        return self.symbols[2:]

    def index(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise PolicyError(f"unknown token {symbol!r}") from None

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.index(t) for t in tokens], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.symbols[i] for i in ids)


class TabularPolicy:
    """Softmax-over-table policy; the ``<bos>`` column is never emitted."""

    def __init__(self, vocab: Vocabulary, order: int = 2, logits: np.ndarray | None = None, version: int = 0):
        if order not in (1, 2):
            raise PolicyError("context order must be 1 or 2")
        self.vocab = vocab
        self.order = order
        n_ctx = vocab.size**order
        if logits is None:
            logits = np.zeros((n_ctx, vocab.size))
        logits = np.array(logits, dtype=float)
        if logits.shape != (n_ctx, vocab.size):
            raise PolicyError(f"logits shape {logits.shape} != {(n_ctx, vocab.size)}")
        if not np.all(np.isfinite(logits)):
            raise PolicyError("logits must be finite")
        self.logits = logits
        self.version = version

    @property
    def shape(self) -> tuple[int, int]:
        return self.logits.shape

    def initial_context(self) -> int:
        return 0  # all-<bos> history

    def next_context(self, ctx, token):
        v = self.vocab.size
        if self.order == 1:
            return token
        return (ctx % v) * v + token

    def contexts_for(self, actions: Sequence[int]) -> np.ndarray:
        ctx = self.initial_context()
        out = np.empty(len(actions), dtype=np.int64)
        for i, a in enumerate(actions):
            out[i] = ctx
            ctx = self.next_context(ctx, int(a))
        return out

    def log_probs(self, contexts) -> np.ndarray:
        """Row-wise log-softmax (shape (n, V)); ``<bos>`` gets -inf."""
        z = self.logits[np.asarray(contexts)]
        z = z.copy()
        z[..., 0] = -np.inf
        m = z.max(axis=-1, keepdims=True)
        lse = m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True))
        return z - lse

    def probs(self, contexts) -> np.ndarray:
        return np.exp(self.log_probs(contexts))

    def snapshot(self, role: str = "old") -> "PolicySnapshot":
        return PolicySnapshot(self, role)

    def copy(self) -> "TabularPolicy":
        return TabularPolicy(self.vocab, self.order, self.logits.copy(), self.version)

    # checkpoint io -------------------------------------------------------

    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write(f"{FORMAT_TAG}\norder {self.order}\nversion {self.version}\n")
        buf.write("vocab " + " ".join(self.vocab.symbols) + "\n")
        buf.write(f"rows {self.logits.shape[0]}\n")
        for row in self.logits:
            buf.write(" ".join(format(float(x), ".17g") for x in row) + "\n")
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="ascii")

    @classmethod
    def loads(cls, text: str) -> "TabularPolicy":
        lines = text.splitlines()
        if not lines or lines[0].strip() != FORMAT_TAG:
            raise PolicyError("not a ctrlopt policy checkpoint")
        header = {}
        for line in lines[1:5]:
            key, _, val = line.partition(" ")
            header[key] = val
        try:
            vocab = Vocabulary(tuple(header["vocab"].split()))
            order = int(header["order"])
            n = int(header["rows"])
            version = int(header["version"])
        except KeyError as e:
            raise PolicyError(f"checkpoint header missing {e.args[0]!r}") from None
        rows = [[float(x) for x in line.split()] for line in lines[5 : 5 + n]]
        return cls(vocab, order, np.array(rows), version)

    @classmethod
    def load(cls, path) -> "TabularPolicy":
        return cls.loads(Path(path).read_text(encoding="ascii"))


class PolicySnapshot:
    """Frozen copy of a policy's parameters (the old or reference policy)."""

    def __init__(self, policy: TabularPolicy, role: str = "old"):
        if role not in ("old", "reference"):
            raise PolicyError(f"unknown snapshot role {role!r}")
        logits = policy.logits.copy()
        logits.flags.writeable = False
        self.role = role
        self._policy = TabularPolicy(policy.vocab, policy.order, logits, policy.version)
        self._policy.logits = logits  # keep the read-only view

    vocab = property(lambda self: self._policy.vocab)
    order = property(lambda self: self._policy.order)
    version = property(lambda self: self._policy.version)
    logits = property(lambda self: self._policy.logits)

    def log_probs(self, contexts):
        return self._policy.log_probs(contexts)

    def probs(self, contexts):
        return self._policy.probs(contexts)

    def contexts_for(self, actions):
        return self._policy.contexts_for(actions)

    def next_context(self, ctx, token):
        return self._policy.next_context(ctx, token)

    def initial_context(self):
        return 0


@dataclass
class Trajectory:
    """One sampled response: emitted action ids, their contexts and log-probs.

    ``actions`` includes the closing ``<eos>`` when one was emitted; a
    response cut off at ``max_len`` has no ``<eos>``.
    """

    candidate: Candidate
    actions: np.ndarray
    contexts: np.ndarray
    logp: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)


def _draw(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(p, axis=1)
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, p.shape[1] - 1)


def sample_batch(policy, n: int, max_len: int, rng: np.random.Generator) -> list[Trajectory]:
    """Draw ``n`` independent responses at temperature 1."""
    if max_len < 1:
        raise PolicyError("max_len must be >= 1")
    vocab = policy.vocab
    ctx = np.full(n, policy.initial_context(), dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    acts = np.full((n, max_len), -1, dtype=np.int64)
    ctxs = np.zeros((n, max_len), dtype=np.int64)
    logps = np.zeros((n, max_len))
    lengths = np.zeros(n, dtype=np.int64)
    for t in range(max_len):
        u = rng.random(n)
        if not alive.any():
            break
        idx = np.flatnonzero(alive)
        lp = policy.log_probs(ctx[idx])
        a = _draw(np.exp(lp), u[idx])
        acts[idx, t] = a
        ctxs[idx, t] = ctx[idx]
        logps[idx, t] = lp[np.arange(len(idx)), a]
        lengths[idx] += 1
        ctx[idx] = policy.next_context(ctx[idx], a)
        alive[idx[a == vocab.eos]] = False
    out = []
    for i in range(n):
        L = int(lengths[i])
        a = acts[i, :L].copy()
        body = a[:-1] if L and a[-1] == vocab.eos else a
        cand = Candidate.from_tokens(vocab.decode(body))
        out.append(Trajectory(cand, a, ctxs[i, :L].copy(), logps[i, :L].copy()))
    return out


def sample_group(task: TaskSpec | None, policy, G: int, max_len: int, rng: np.random.Generator) -> list[Trajectory]:
    """Sample a group of ``G`` responses for ``task``.

    The tabular policy is not conditioned on the source sequence, so
    ``task`` only documents which prompt the group belongs to.
    """
    if G < 2:
        raise PolicyError("group size must be >= 2")
    return sample_batch(policy, G, max_len, rng)


def log_prob(policy, tokens: Sequence[str] | Sequence[int]) -> np.ndarray:
    """Per-token conditional log-probabilities of an action sequence."""
    if len(tokens) and isinstance(tokens[0], str):
        ids = policy.vocab.encode(tokens)
    else:
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= policy.vocab.size):
            raise PolicyError("token id out of range")
    if np.any(ids == policy.vocab.bos):
        raise PolicyError(f"{BOS!r} cannot be emitted")
    ctx = policy.contexts_for(ids)
    lp = policy.log_probs(ctx)
    return lp[np.arange(len(ids)), ids]


@dataclass(frozen=True)
class BeamHit:
    candidate: Candidate
    actions: tuple[int, ...]
    logp: float


def beam_search(policy, task: TaskSpec | None, width: int, max_len: int) -> list[BeamHit]:
    """Length-bounded beam search over summed log-probabilities.

    A hypothesis completes when it emits ``<eos>`` or reaches ``max_len``
    tokens. Ties are broken by the lexicographic order of the action ids.
    """
    if width < 1:
        raise PolicyError("beam width must be >= 1")
    V = policy.vocab.size
    eos = policy.vocab.eos
    live: list[tuple[float, tuple[int, ...], int]] = [(0.0, (), policy.initial_context())]
    done: list[tuple[float, tuple[int, ...]]] = []
    for step in range(max_len):
        if not live:
            break
        lp = policy.log_probs(np.array([c for _, _, c in live]))
        expansions = []
        for (score, acts, ctx), row in zip(live, lp):
            for tok in range(1, V):
                expansions.append((score + float(row[tok]), acts + (tok,), ctx, tok))
        best = heapq.nsmallest(width, expansions, key=lambda e: (-e[0], e[1]))
        live = []
        for score, acts, ctx, tok in best:
            if tok == eos:
                done.append((score, acts))
            elif step + 1 == max_len:
                done.append((score, acts))
            else:
                live.append((score, acts, policy.next_context(ctx, tok)))
    done.sort(key=lambda e: (-e[0], e[1]))
    hits = []
    for score, acts in done[:width]:
        body = acts[:-1] if acts and acts[-1] == eos else acts
        hits.append(BeamHit(Candidate.from_tokens(policy.vocab.decode(body)), acts, score))
    return hits


def greedy_decode(policy, max_len: int) -> tuple[tuple[int, ...], float]:
    ctx, acts, score = policy.initial_context(), (), 0.0
    for _ in range(max_len):
        row = policy.log_probs(np.array([ctx]))[0]
        tok = int(np.argmax(row))
        acts += (tok,)
        score += float(row[tok])
        if tok == policy.vocab.eos:
            break
        ctx = policy.next_context(ctx, tok)
    return acts, score


# ---------------------------------------------------------------------------
# gradients


def logp_grad(policy, contexts: np.ndarray, actions: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_t w_t * d log pi(a_t | c_t) / d logits, as a dense table."""
    contexts = np.asarray(contexts, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    weights = np.asarray(weights, dtype=float)
    p = policy.probs(contexts)
    g = -weights[:, None] * p
    g[np.arange(len(actions)), actions] += weights
    out = np.zeros_like(policy.logits)
    np.add.at(out, contexts, g)
    return out


def apply_gradient(policy: TabularPolicy, gradient: np.ndarray, learning_rate: float) -> TabularPolicy:
    """In-place descent step ``logits -= lr * gradient``."""
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != policy.logits.shape:
        raise PolicyError(f"gradient shape {gradient.shape} != logits shape {policy.logits.shape}")
    if not np.all(np.isfinite(gradient)):
        raise PolicyError("non-finite gradient entries")
    policy.logits -= learning_rate * gradient
    policy.version += 1
    return policy

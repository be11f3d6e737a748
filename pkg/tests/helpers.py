"""Shared builders and independent oracles for the test-suite."""

from __future__ import annotations

import numpy as np

from ctrlopt.optimizer import GroupRollout
from ctrlopt.policy import TabularPolicy, Vocabulary, log_prob, sample_batch


def central_fd(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Five-point central differences of scalar ``f`` at every entry of ``x``."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def random_policy(rng, V=3, order=2, scale=1.0) -> TabularPolicy:
    vocab = Vocabulary.of_size(V)
    return TabularPolicy(vocab, order, rng.normal(scale=scale, size=(V**order, V)))


def small_instance(rng, V=3, max_len=3, G=2, n_groups=2, M=2):
    """Rollouts drawn from an 'old' policy plus a perturbed live policy and a reference."""
    old = random_policy(rng, V)
    ref = random_policy(rng, V, scale=0.5).snapshot("reference")
    groups = []
    for _ in range(n_groups):
        trajs = sample_batch(old, G, max_len, rng)
        mat = rng.random((G, M))
        groups.append(
            GroupRollout(None, trajs, mat.copy(), mat, mat.mean(axis=1), [log_prob(ref, t.actions) for t in trajs])
        )
    live = TabularPolicy(old.vocab, old.order, old.logits + rng.normal(scale=0.15, size=old.logits.shape))
    return groups, live, ref

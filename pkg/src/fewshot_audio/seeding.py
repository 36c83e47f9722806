"""Deterministic RNG derivation.

Every random decision in the harness flows from an explicit integer seed; no
implicit entropy. Child generators are derived from (seed, key...) tuples so
that e.g. evaluation task t gets the same stream regardless of worker count
or execution order.
"""
from __future__ import annotations

import hashlib

import numpy as np


def stable_hash(*parts) -> int:
    """64-bit hash of strings/ints, stable across runs and platforms.

    Python's built-in hash() is salted per process, so it cannot be used to
    derive reproducible seeds.
    """
    joined = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(joined.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def spawn_rng(seed: int, *keys) -> np.random.Generator:
    """Derive an independent generator from a base seed and context keys.

    Integer keys are used as-is; everything else goes through stable_hash.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    entropy = [int(seed)]
    for key in keys:
        entropy.append(int(key) if isinstance(key, (int, np.integer)) else stable_hash(key))
    return np.random.default_rng(np.random.SeedSequence(entropy))

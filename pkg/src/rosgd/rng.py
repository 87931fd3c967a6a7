"""Deterministic, keyed random streams.

Every random quantity in the package comes from a Philox (counter-based)
generator keyed by ``(master_seed, label, *ids)``.  Labels are hashed with
SHA-256 so keys do not depend on Python's salted ``hash``.  Consumers draw a
fixed number of doubles per round so that round ``t`` always reads the same
counter position, which is what lets coupled runs share randomness exactly.
"""

from __future__ import annotations

import hashlib

import numpy as np

GENERATOR_VERSION = "rosgd-philox4x64/1"


def label_code(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def derive_rng(master_seed: int, label: str, *ids: int) -> np.random.Generator:
    """Independent generator for ``(master_seed, label, ids...)``."""
    if master_seed < 0 or any(i < 0 for i in ids):
        raise ValueError("seeds and ids must be non-negative integers")
    ss = np.random.SeedSequence([int(master_seed), label_code(label), *map(int, ids)])
    return np.random.Generator(np.random.Philox(ss))


def as_generator(seed) -> np.random.Generator:
    """Accept an int seed or an existing generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return derive_rng(int(seed), "default")


def uniform_index(u: np.ndarray | float, n):
    """Map uniforms in [0, 1) to indices in [0, n), clamped against rounding."""
    j = np.floor(np.asarray(u) * n).astype(np.int64)
    return np.minimum(j, np.maximum(np.asarray(n, dtype=np.int64) - 1, 0))

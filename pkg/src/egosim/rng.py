"""Deterministic random-stream derivation.

All randomness in the pipeline flows from one master seed. Named substreams
are derived by hashing the stream names into extra SeedSequence entropy, so
`substream(seed, "corpus", "sample", "17")` is stable across runs, platforms
and call order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_entropy(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seed_sequence(master_seed: int, *names: str) -> np.random.SeedSequence:
    """SeedSequence for a named substream of the master seed."""
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF]
    entropy.extend(_name_entropy(n) for n in names)
    return np.random.SeedSequence(entropy)


def substream(master_seed: int, *names: str) -> np.random.Generator:
    """Generator for a named substream of the master seed."""
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, *names)))

"""Named random substreams derived from a single run seed.

Every source of randomness (data generation, parameter init, epoch
shuffling) draws from its own stream so that components stay reproducible
independently of each other.
"""

import hashlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Deterministic generator for (seed, name); stable across platforms."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, key])))

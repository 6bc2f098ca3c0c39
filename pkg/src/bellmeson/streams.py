"""Seeded random substreams.

Every random draw in the toolkit comes from a ``numpy.random.Generator``
built on PCG64 and keyed by ``(seed, domain, index)`` through
``SeedSequence`` spawn keys. Work split into chunks by index therefore
produces the same numbers regardless of how chunks are scheduled.
"""
from __future__ import annotations

import numpy as np

GENERATOR_ALGORITHM = "numpy-PCG64/SeedSequence(seed, spawn_key=(domain, index))"

#: Events per substream chunk. Part of the reproducibility contract.
CHUNK_SIZE = 1 << 16

DOMAIN_GENERATOR = 0
DOMAIN_DETECTOR = 1
DOMAIN_ENSEMBLE = 2
DOMAIN_LHV = 3
DOMAIN_MISC = 4

_U64 = (1 << 64) - 1


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= _U64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def substream(seed: int, domain: int, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(int(domain), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, domain: int, index: int) -> int:
    """A child 64-bit seed, e.g. one per pseudo-experiment."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(int(domain), int(index)))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def as_generator(random_state) -> np.random.Generator:
    """Accept None, an int seed, or an existing Generator."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    if random_state is None:
        return np.random.default_rng()
    return substream(random_state, DOMAIN_MISC)

"""Seeded, splittable random streams.

Every chain owns one ``numpy.random.Generator``; independent chains are
spawned from a single root seed so that a whole experiment is reproducible
from that one integer.
"""

import numpy as np


def make_rng(seed=None):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence(seed))


def spawn(seed, n):
    """Return ``n`` statistically independent generators derived from ``seed``."""
    root = np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in root.spawn(n)]


def child_seed(seed, *keys):
    """Deterministic integer seed for a named sub-task (e.g. sampler x replicate)."""
    ss = np.random.SeedSequence([int(seed), *[_key_int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _key_int(key):
    if isinstance(key, (int, np.integer)):
        return int(key)
    # stable across processes, unlike hash()
    return int.from_bytes(str(key).encode(), "little") % (2**32)

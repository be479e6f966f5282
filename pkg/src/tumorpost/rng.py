"""Deterministic named random streams.

Every random decision in the pipeline draws from a stream derived from the
master seed plus a path of names, so results never depend on call order or
worker count.
"""

import hashlib

import numpy as np


def stream(master_seed: int, *names) -> np.random.Generator:
    """Independent Generator for (master_seed, name path).

    The same (seed, names) pair always yields the same stream; distinct
    paths yield statistically independent streams.
    """
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode())
    for name in names:
        h.update(b"/")
        h.update(str(name).encode())
    words = np.frombuffer(h.digest(), dtype=np.uint32)
    entropy = [int(w) for w in words]
    return np.random.default_rng(np.random.SeedSequence(entropy))

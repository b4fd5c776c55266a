"""Seed lineages for counter-based (Philox) streams.

Every random draw in the package comes from a Philox generator keyed by a
lineage tuple (master seed, stream, path id, level, ...).  A path's noise
therefore depends only on its own lineage, never on how many paths are
simulated or how they are split across workers.
"""

import numpy as np

BROWNIAN = 0
BRIDGE = 1
INNER = 2
PROBE = 3
SAMPLING = 4


def generator(seed: int, *lineage: int) -> np.random.Generator:
    if seed < 0 or any(v < 0 for v in lineage):
        raise ValueError("seed lineage entries must be nonnegative integers")
    ss = np.random.SeedSequence([int(seed), *map(int, lineage)])
    return np.random.Generator(np.random.Philox(ss))

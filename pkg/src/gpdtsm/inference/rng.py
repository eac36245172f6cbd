"""Keyed random streams.

Every random draw comes from a generator keyed by ``(master seed, purpose,
t, stage, sweep, block)``. Batch draws are indexed by particle position, so
results depend only on the key and never on evaluation order or worker
scheduling.
"""

from __future__ import annotations

import numpy as np

INIT = 1
RESAMPLE = 2
JITTER = 3
PREDICT = 4
CHAIN = 5
OPTIM = 6


def stream(master_seed: int, *key: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))

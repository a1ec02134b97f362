"""Keyed random streams.

Every random draw in the pipeline comes from a Philox generator whose key is
derived from the run seed plus a tuple of integers (epoch, image index, view,
purpose).  Streams are therefore independent of batching, worker count and
call order, which is what makes resume and concurrent loading reproducible.
"""

import numpy as np

# purpose tags, kept stable: they are part of the reproducibility contract
AUGMENT = 0
NOISE = 1
MASK = 2
SHUFFLE = 3
PROBE = 4


def stream(seed, *key):
    """Return an independent generator for ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))

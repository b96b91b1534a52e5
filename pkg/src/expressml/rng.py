"""Seeded random streams.

Every consumer of randomness derives its own ``numpy.random.Generator`` from
a root seed plus a tuple of integer keys (tree index, fern index, ...).  The
bit generator is PCG64 (O'Neill's permuted congruential generator, 128-bit
state, 64-bit output), seeded through ``SeedSequence``.  Both are
platform-independent, so a seed reproduces the same stream on any machine.
Because streams are keyed rather than shared, results never depend on how
work is distributed across workers.
"""

import numpy as np

from .errors import InvalidParams

MAX_SEED = 2**64 - 1


def check_seed(seed):
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise InvalidParams(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise InvalidParams(f"seed must lie in [0, 2**64), got {seed}")
    return seed


def stream(seed, *keys):
    """Return an independent generator for ``(seed, *keys)``."""
    entropy = [check_seed(seed), *(int(k) for k in keys)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

"""Deterministic, keyed random streams.

Every stochastic choice in the pipeline draws from a stream keyed by
(seed, *context), where context is a tuple of small integers such as
(frame, phase, iteration). Streams built from the same key are identical
across runs and platforms, which is what makes whole runs bit-reproducible.
"""

from __future__ import annotations

import numpy as np

# stable ids for the context slot so unrelated draws never share a stream
PHASE_PIXELS = 0
PHASE_STRATIFIED = 1
PHASE_NEAR = 2
PHASE_NOISE = 3
PHASE_DROPOUT = 4
PHASE_KEYFRAMES = 5
PHASE_INIT = 6
PHASE_EVAL = 7


def stream(seed: int, *context: int) -> np.random.Generator:
    """Counter-based generator for one (seed, context) key."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(c) for c in context))
    return np.random.Generator(np.random.Philox(ss))


class MidpointRng:
    """Degenerate stand-in for a Generator: every uniform draw is the midpoint.

    Used by tests that pin stratified samples to bin centers.
    """

    def uniform(self, low=0.0, high=1.0, size=None):
        mid = (np.asarray(low) + np.asarray(high)) / 2.0
        if size is None:
            return mid
        return np.broadcast_to(mid, size).copy() if np.ndim(mid) else np.full(size, float(mid))

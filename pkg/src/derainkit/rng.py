"""Counter-based random streams for reproducible pipelines.

Every stochastic component draws from its own Philox stream, keyed by
(seed, stream id, draw indices). Streams are independent of each other and
of call order, so reruns with the same seed are bit-for-bit reproducible
no matter which subsystems run or in what order.
"""

from __future__ import annotations

import numpy as np

# Stream identifiers. Never renumber: saved results depend on them.
STREAM_REFERENCE = 101   # pseudo-derained reference sampling
STREAM_ACTIONS = 102     # per-pixel action sampling
STREAM_INIT = 103        # network weight initialization
STREAM_SYNTH = 104       # synthetic streak generation
STREAM_DICT = 105        # dictionary atom initialization
STREAM_KMEANS = 106      # k-means++ seeding


def stream_rng(seed: int, stream: int, *draw: int) -> np.random.Generator:
    """Generator for (seed, stream, draw...). Same key, same sequence."""
    key = (int(seed), int(stream)) + tuple(int(d) for d in draw)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))

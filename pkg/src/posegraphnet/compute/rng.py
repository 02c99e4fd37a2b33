"""Seeded, counter-based random streams (no global state)."""
import numpy as np

STREAM_INIT = 0
STREAM_ADJACENCY = 1
STREAM_DROPOUT = 2
STREAM_SHUFFLE = 3
STREAM_SYNTH = 4


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed by ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))

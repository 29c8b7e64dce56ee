"""
Counter-based random streams

Every consumer of randomness asks for its own Philox generator keyed by the run
seed, a purpose tag and any indices (sample id, epoch, patch index). Streams
therefore never depend on evaluation order or on the number of worker threads.
"""
from enum import IntEnum
from typing import Sequence, Union

import numpy as np

SeedKey = Union[int, Sequence[int]]


class Purpose(IntEnum):
    INIT = 0
    EPSILON = 1
    SHUFFLE = 2
    SCENE = 3
    SPLIT = 4
    MONTE_CARLO = 5


def _flatten(key: SeedKey) -> list:
    if isinstance(key, (int, np.integer)):
        return [int(key)]
    return [int(k) for k in key]


def stream(key: SeedKey, purpose: Purpose, *indices: int) -> np.random.Generator:
    """Philox generator for (key..., purpose, indices...)"""
    words = _flatten(key) + [int(purpose)] + [int(i) for i in indices]
    if any(w < 0 for w in words):
        raise ValueError(f"stream keys must be non-negative, got {words}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))

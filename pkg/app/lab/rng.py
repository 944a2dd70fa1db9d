# app/lab/rng.py

from enum import IntEnum

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

SEED_MAX = 2**64


class Stream(IntEnum):
    """Independent named streams derived from one experiment seed"""
    STEINHAUS = 1
    GAUSSIAN_PAIR = 2
    FIELD = 3
    FIELD_EXACT = 4
    BALLOT = 5
    REFLECTION = 6
    SAMPLING = 7
    SYNTHETIC = 8


def keyed_generator(seed: int, stream: Stream, *key: int) -> Generator:
    """
    Counter-based generator keyed by (seed, stream, *key)

    Two calls with the same key give the same draws regardless of the order
    or the thread in which they are made.
    """
    if not 0 <= seed < SEED_MAX:
        raise ValueError(f"seed must be in [0, 2^64), got {seed}")
    if any(k < 0 for k in key):
        raise ValueError(f"stream keys must be nonnegative, got {key}")
    ss = SeedSequence(entropy=seed, spawn_key=(int(stream), *map(int, key)))
    return Generator(Philox(ss))


def chunk_bounds(total: int, chunk: int) -> list[tuple[int, int, int]]:
    """Split `total` replicas into fixed chunks: (chunk index, start, size)"""
    out = []
    for idx, start in enumerate(range(0, total, chunk)):
        out.append((idx, start, min(chunk, total - start)))
    return out


def uniform_angles(rng: Generator, shape) -> np.ndarray:
    return rng.uniform(0.0, 2.0 * np.pi, size=shape)

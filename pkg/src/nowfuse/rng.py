"""Deterministic random streams.

All randomness in the library flows through Philox, a counter-based
generator: a stream is fully determined by (seed, stream ids), never by
how many values other streams consumed or by worker count.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent Philox generator for the stream named by (seed, *stream)."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *stream: int) -> int:
    """Well-mixed child seed for (seed, *stream), usable as another stream root."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return int(ss.generate_state(1, np.uint64)[0] >> 1)

"""
Seeded randomness

A command takes one seed. Each consumer (weight init, shuffling, synthetic
data, ...) gets its own Philox stream keyed by (seed, stream id), so the
draws of one consumer never depend on how much another consumed, and worker
threads can each own a generator without sharing state.
"""

import numpy as np

STREAMS = {
    'init': 0,
    'shuffle': 1,
    'synthetic': 2,
    'split': 3,
    'sampling': 4,
    'attack': 5,
}

_MASK64 = (1 << 64) - 1


def generator(seed: int, stream: str, index: int = 0) -> np.random.Generator:
    """
    Generator for one named stream of a seed

    Args:
        seed: nonnegative command seed
        stream: consumer name from STREAMS
        index: sub-stream number (e.g. per worker or per sample)
    """
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    if stream not in STREAMS:
        raise ValueError(f"unknown random stream '{stream}'")
    key = np.array([seed & _MASK64, (STREAMS[stream] << 32) | (index & 0xFFFFFFFF)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))

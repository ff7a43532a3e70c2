"""Deterministic random streams.

Every stochastic component draws from numpy's PCG64 bit generator (a permuted
congruential generator), keyed through SeedSequence so derived streams (per
instance, per run, per path, per branch) are reproducible and independent of
scheduling order. Normal deviates are produced by an explicit Box-Muller
transform over uniform draws instead of numpy's ziggurat sampler, so the
mapping from bit stream to deviates is pinned by a documented formula.

The identifier below is recorded in all output metadata.
"""

from __future__ import annotations

import numpy as np

RNG_ID = "pcg64/box-muller"

# Stream tags keep derived SeedSequence keys from colliding across purposes.
STREAM_INSTANCE = 0
STREAM_RUN = 1
STREAM_PATH = 2
STREAM_BRANCH = 3


def make_generator(*key: int) -> np.random.Generator:
    """Generator seeded by a tuple of non-negative integers."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))


def normals(gen: np.random.Generator, size: int) -> np.ndarray:
    """`size` standard normal deviates via Box-Muller.

    Draws ceil(size/2) uniform pairs (u1, u2) from [0, 1) and maps them to
        z0 = sqrt(-2 log(1 - u1)) cos(2 pi u2)
        z1 = sqrt(-2 log(1 - u1)) sin(2 pi u2)
    using 1 - u1 in (0, 1] so the log never sees zero. The cos block precedes
    the sin block in the output; a trailing odd element is dropped.
    """
    if size < 0:
        raise ValueError("size must be non-negative")
    if size == 0:
        return np.empty(0)
    half = (size + 1) // 2
    u = gen.random((2, half))
    radius = np.sqrt(-2.0 * np.log1p(-u[0]))
    angle = 2.0 * np.pi * u[1]
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
    return z[:size]

"""Seeded counter-based random streams.

Philox is keyed by the seed and every named substream gets its own counter
block, so draws are identical across platforms and independent of the order
in which substreams are consumed.
"""

from __future__ import annotations

import zlib

import numpy as np


def make_rng(seed: int, stream: int | str = 0) -> np.random.Generator:
    if isinstance(stream, str):
        stream = zlib.crc32(stream.encode())
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, stream]))

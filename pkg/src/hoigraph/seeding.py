"""Deterministic RNG substreams: one root seed, crc32-tokenized children."""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *tokens) -> np.random.Generator:
    """A generator derived from the root seed and a stable token path."""
    entropy = [int(seed)] + [zlib.crc32(str(t).encode("utf-8")) for t in tokens]
    return np.random.default_rng(np.random.SeedSequence(entropy))

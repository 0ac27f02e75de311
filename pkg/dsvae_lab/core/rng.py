"""Named counter-based random streams.

All randomness comes from numpy's Philox generator keyed by
``SeedSequence((seed, stream, *indices))``. Each consumer owns its stream, so
adding draws in one place never shifts the draws seen by another.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("init", "data", "sampling", "eval", "classifier", "synth")


def stream_id(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def make_rng(seed: int, stream: str, *indices: int) -> np.random.Generator:
    """Return a Philox generator for ``stream`` at the given indices."""

    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    entropy = (int(seed), stream_id(stream), *(int(index) for index in indices))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


__all__ = ["STREAMS", "make_rng", "stream_id"]

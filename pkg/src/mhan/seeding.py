"""Derive independent, reproducible random streams from one integer seed."""

import zlib

import numpy as np


def derive_rng(seed: int, *labels: str) -> np.random.Generator:
    """Generator keyed by ``seed`` and a path of string labels.

    The same (seed, labels) always yields the same stream, and distinct
    label paths yield statistically independent streams.
    """
    key = [int(seed)] + [zlib.crc32(label.encode("utf-8")) for label in labels]
    return np.random.default_rng(np.random.SeedSequence(key))

"""Seeded, splittable random streams.

Every consumer asks for a stream by ``(seed, *labels)`` so that adding a new
consumer never shifts the draws of an existing one.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def stream(seed: int, *labels) -> np.random.Generator:
    """Independent generator for ``seed`` split along ``labels``."""
    seq = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(_label_key(x) for x in labels))
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(seed: int, *labels) -> int:
    """A 63-bit child seed, for handing to code that takes an int."""
    return int(stream(seed, *labels).integers(0, 2**63 - 1))

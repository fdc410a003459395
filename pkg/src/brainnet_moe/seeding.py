"""Named random sub-streams derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Generator for stream ``name`` (e.g. ``"init"``, ``"shuffle"``, ``"data"``).

    Streams with different names are independent; the same ``(seed, name,
    extra)`` always yields the same sequence.
    """
    key = [int(seed), zlib.crc32(name.encode("utf-8")), *[int(e) for e in extra]]
    return np.random.default_rng(np.random.SeedSequence(key))

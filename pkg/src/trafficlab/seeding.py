"""Deterministic RNG substreams.

Every stochastic component draws from its own substream derived by hashing a
master seed together with a label path. Streams are therefore independent of
evaluation order and identical across platforms and process counts.
"""

from __future__ import annotations

import hashlib
import random


def substream_seed(master_seed: int, *parts) -> int:
    key = "|".join([str(master_seed)] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "big")


def substream_rng(master_seed: int, *parts) -> random.Random:
    return random.Random(substream_seed(master_seed, *parts))

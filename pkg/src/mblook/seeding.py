"""Deterministic derivation of independent random streams from one global seed."""

from __future__ import annotations

import zlib

import numpy as np


def stream_id(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def derive_rng(seed: int, *names: str | int) -> np.random.Generator:
    """Generator for the stream ``seed/names[0]/names[1]/...``.

    Each component name is hashed into the spawn key, so adding a new consumer
    never shifts the numbers seen by an existing one.
    """
    key = tuple(n if isinstance(n, int) else stream_id(n) for n in names)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def episode_seed(base_seed: int, index: int) -> int:
    return int(base_seed) + int(index)

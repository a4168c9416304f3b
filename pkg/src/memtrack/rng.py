"""Seeded random number generation.

All stochastic behaviour in the package (parameter init, synthetic data,
clip sampling) flows through `make_rng`. The generator is numpy's PCG64,
a fixed, documented 128-bit LCG with output permutation whose streams are
stable across numpy releases, so a seed pins every downstream byte.

Sub-streams are derived by hashing a string key into the seed, which keeps
independent consumers (e.g. "init" vs "data") decoupled: adding draws to
one never shifts the other.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_int(key: str) -> int:
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")


def make_rng(seed: int, key: str = "") -> np.random.Generator:
    """Deterministic generator for `seed`, optionally forked by a string key."""
    if key:
        seed = (int(seed) ^ _key_to_int(key)) & 0xFFFFFFFFFFFFFFFF
    return np.random.Generator(np.random.PCG64(seed))

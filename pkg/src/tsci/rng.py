"""Deterministic seeding helpers.

Every stochastic component draws from a generator derived here, so a run is a
pure function of (config, seed). Child streams are derived with SeedSequence
and a stable string tag, never by consuming the parent stream.
"""
from __future__ import annotations

import numpy as np

LCG_A = 6364136223846793005
LCG_C = 1442695040888963407
_MASK64 = (1 << 64) - 1


def lcg_next(state: int) -> int:
    """Advance the 64-bit LCG word used by environment spawn schedules."""
    return (LCG_A * state + LCG_C) & _MASK64


def _tag_entropy(tag: str) -> list[int]:
    return [b for b in tag.encode("utf-8")]


def derive_generator(seed: int, tag: str) -> np.random.Generator:
    """Child generator for component `tag` under a run seed."""
    seq = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(_tag_entropy(tag)))
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(seed: int, tag: str) -> int:
    """Stable 63-bit child seed (for envs and sub-runs)."""
    seq = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(_tag_entropy(tag)))
    return int(seq.generate_state(1, np.uint64)[0] >> 1)

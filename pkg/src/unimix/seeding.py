"""Sub-seed derivation: every random stream is a pure function of (seed, purpose, index...)."""
import zlib

import numpy as np


def derive_rng(seed: int, purpose: str, *index: int) -> np.random.Generator:
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(purpose.encode("utf-8"))]
    key.extend(int(i) & 0xFFFFFFFF for i in index)
    return np.random.default_rng(np.random.SeedSequence(key))


def derive_seed(seed: int, purpose: str, *index: int) -> int:
    return int(derive_rng(seed, purpose, *index).integers(0, 2**31 - 1))


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)

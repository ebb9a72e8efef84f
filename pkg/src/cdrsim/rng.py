"""Named random streams derived from a single user seed.

A stream is addressed by a path such as ``("realization", 17, "field", "soil")``.
Each path component is hashed to a 32-bit word and appended to the
``SeedSequence`` spawn key, so streams are independent of one another and
of the order in which they are requested.
"""

from __future__ import annotations

import hashlib

import numpy as np

MAX_SEED = 2**64 - 1


def _word(part) -> int:
    digest = hashlib.blake2b(str(part).encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def seed_sequence(seed: int, *path) -> np.random.SeedSequence:
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_word(p) for p in path))


def derive_rng(seed: int, *path) -> np.random.Generator:
    """Generator for the stream at ``path`` under ``seed``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *path)))


def path_string(*path) -> str:
    return "/".join(str(p) for p in path)

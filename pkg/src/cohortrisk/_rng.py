"""Named, schedule-independent random substreams of a master seed."""

import hashlib

import numpy as np


def _words(name: str) -> list[int]:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return [int.from_bytes(digest[:4], "little"), int.from_bytes(digest[4:], "little")]


def substream(seed: int, *names: str) -> np.random.Generator:
    """Generator keyed by ``seed`` and an ordered tuple of names.

    The same (seed, names) always yields the same stream, whatever else
    has been drawn elsewhere.
    """
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    entropy = [seed & 0xFFFFFFFF, seed >> 32]
    for name in names:
        entropy.extend(_words(name))
    return np.random.default_rng(np.random.SeedSequence(entropy))

"""Named random streams derived from one run seed.

Every source of randomness in a run (model init, epoch shuffling, synthetic
data, ...) draws from its own stream so components can be re-seeded
independently while the whole run stays reproducible from a single integer.
"""

import hashlib

import numpy as np


def stream_seed(seed: int, name: str) -> int:
    digest = hashlib.blake2b(f"{int(seed)}:{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def named_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(seed, name))

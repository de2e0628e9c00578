"""Named random-stream derivation from a single master seed.

Every stochastic component asks for ``derive_rng(seed, "label", i, j, ...)``.
Streams depend only on the seed, the label and the indices, so adding a
camera or a trial never perturbs any other stream.
"""

import hashlib
from functools import lru_cache

import numpy as np

_MASK64 = (1 << 64) - 1


@lru_cache(maxsize=256)
def _label_words(label):
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def derive_seed_sequence(master_seed, label, *indices):
    master_seed = int(master_seed) & _MASK64
    entropy = [master_seed & 0xFFFFFFFF, master_seed >> 32]
    entropy += _label_words(label)
    for i in indices:
        i = int(i)
        if i < 0:
            raise ValueError("stream indices must be non-negative")
        entropy += [i & 0xFFFFFFFF, (i >> 32) & 0xFFFFFFFF]
    return np.random.SeedSequence(entropy)


def derive_rng(master_seed, label, *indices):
    return np.random.Generator(np.random.PCG64(derive_seed_sequence(master_seed, label, *indices)))

"""Deterministic, splittable random streams.

Every stochastic routine in this package draws from a stream derived from a
64-bit master seed plus a sequence of labels (experiment name, grid index,
replicate index, ...).  Streams are backed by the counter-based Philox
generator, so replicate r of experiment e produces the same numbers no matter
which worker executes it or in which order.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "derive_entropy", "BLOCK"]

# Block size for buffered scalar draws in the event loops.
BLOCK = 1 << 14


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFFFFFFFFFF
    if isinstance(label, float):
        label = repr(label)
    if isinstance(label, str):
        digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"stream labels must be int, float, or str, got {type(label)!r}")


def derive_entropy(master_seed: int, *labels) -> list[int]:
    """Entropy word list for (master seed, labels); stable across runs."""
    return [int(master_seed) & 0xFFFFFFFFFFFFFFFF] + [_label_to_int(x) for x in labels]


def stream(master_seed: int, *labels) -> np.random.Generator:
    """Independent generator keyed by (master seed, labels)."""
    seq = np.random.SeedSequence(derive_entropy(master_seed, *labels))
    return np.random.Generator(np.random.Philox(seed=seq))

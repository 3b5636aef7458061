"""Named random substreams derived from one master seed.

Every random decision in the pipeline draws from a generator obtained via
``substream(seed, purpose)``. Identical (seed, purpose) pairs always yield
identical streams, independent of call order and thread count, so one seed
reproduces an entire pipeline run.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _purpose_words(purpose: str) -> list[int]:
    # stable across platforms and Python hash randomization
    digest = hashlib.sha256(purpose.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]


def substream(seed: int, purpose: str) -> np.random.Generator:
    """Return a fresh generator for the named purpose under the master seed."""
    entropy = [int(seed) & _MASK64, *_purpose_words(purpose)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, purpose: str) -> int:
    """A 63-bit integer seed for the named purpose (for manifests and reports)."""
    words = _purpose_words(purpose)
    return ((int(seed) & _MASK64) ^ words[0] ^ (words[1] << 1)) & ((1 << 63) - 1)

"""Counter-based random substreams derived from one root seed.

Each concern (initial choice, dropout masks, evaluation noise, ...) gets its
own stream keyed by name plus integer counters, so adding a new consumer or
resuming mid-run never shifts the draws seen by another.
"""

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")


def substream(root_seed: int, name: str, *counters: int) -> np.random.Generator:
    """Return an independent generator for ``(root_seed, name, *counters)``."""
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF, _name_key(name)]
    entropy.extend(int(c) for c in counters)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def subseed(root_seed: int, name: str, *counters: int) -> int:
    """Integer seed drawn from :func:`substream`, for APIs that want an int."""
    return int(substream(root_seed, name, *counters).integers(0, 2**63 - 1))

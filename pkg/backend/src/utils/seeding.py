"""Named random streams derived from a single root seed."""
import hashlib
from typing import Optional

import numpy as np

STREAMS = ("init", "split", "shuffle", "dropout", "simulate", "validation")


def _name_key(name: str) -> int:
    # stable across processes, unlike hash()
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def stream(root_seed: int, name: str, index: Optional[int] = None) -> np.random.Generator:
    """Generator for the named stream, optionally sub-indexed (e.g. by epoch)."""
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF, _name_key(name)]
    if index is not None:
        entropy.append(int(index))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def stream_seed(root_seed: int, name: str) -> int:
    """Integer seed for APIs that take a seed instead of a Generator."""
    return int(stream(root_seed, name).integers(0, 2**31 - 1))

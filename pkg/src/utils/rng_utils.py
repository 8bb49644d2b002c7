#!/usr/bin/env python3
"""
Derived random streams.

Every stochastic step (fold shuffling, parent sampling, noise, initialization,
mini-batch order) draws from a stream keyed by a base seed plus a tuple of
identifiers such as (run_id, fold, clip_id). Streams never depend on the
order in which trials are executed.
"""

import hashlib
from typing import Union

import numpy as np

Key = Union[str, int]


def derive_seed(base_seed: int, *keys: Key) -> int:
    """
    Derive a 64-bit seed from a base seed and identifying keys.

    Args:
        base_seed: Experiment-level seed
        *keys: Identifiers of the stream (run id, fold, clip id, purpose)

    Returns:
        Unsigned 64-bit integer seed
    """
    material = "/".join([str(int(base_seed))] + [str(k) for k in keys])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(base_seed: int, *keys: Key) -> np.random.Generator:
    """Return a numpy Generator for the stream identified by keys."""
    return np.random.default_rng(derive_seed(base_seed, *keys))

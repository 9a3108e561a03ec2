"""Named random substreams derived from a single root seed."""

import hashlib

import numpy as np


def stream_key(name):
    """Stable 64-bit integer for a stream name"""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed, name, *keys):
    """Generator for the stream `name` under root `seed`, optionally keyed further.

    The same (seed, name, keys) always yields the same sequence, independent of
    how many other streams were consumed before it.
    """
    entropy = [int(seed), stream_key(name)]
    for key in keys:
        key = int(key)
        if key < 0:
            raise ValueError(f"substream keys must be non-negative, got {key}")
        entropy.append(key)
    return np.random.default_rng(np.random.SeedSequence(entropy))

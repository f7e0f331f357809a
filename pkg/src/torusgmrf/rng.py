"""Seed derivation: every random stream is keyed by (master seed, tag, index)."""

import hashlib

import numpy as np


def substream_seed(seed, tag, index=0):
    digest = hashlib.sha256(f"{int(seed)}:{tag}:{int(index)}".encode()).digest()
    return int.from_bytes(digest[:16], "little")


def substream(seed, tag, index=0):
    """Independent generator for the stream ``(seed, tag, index)``.

    Streams do not depend on how work is split across workers, so any
    computation built from them is reproducible at every thread count.
    """
    return np.random.Generator(np.random.PCG64(substream_seed(seed, tag, index)))

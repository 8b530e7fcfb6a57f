"""Seed derivation: every random stream is keyed by (root seed, purpose tag, index).

The purpose tag is hashed with CRC-32 so streams are stable across runs, processes
and platforms, and independent of scheduling order.
"""
import zlib

import numpy as np


def stream_key(seed, purpose, index=0):
    return [int(seed) & 0xFFFFFFFF, zlib.crc32(purpose.encode("utf-8")), int(index)]


def make_rng(seed, purpose="default", index=0):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence(stream_key(seed, purpose, index)))


def derive_seed(seed, purpose, index=0):
    """A plain integer seed for a sub-task, drawn from its own stream."""
    return int(np.random.SeedSequence(stream_key(seed, purpose, index)).generate_state(1)[0])

"""Labeled sub-seed derivation.

Every random stream in a run comes from one integer seed plus a label
(and optionally an index), so that e.g. batch 17 of a run always sees the
same draws regardless of what else consumed randomness before it.
"""

import zlib

import numpy as np


def _label_key(label):
    return zlib.crc32(label.encode("utf-8"))


def seed_sequence(seed, label, *index):
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, _label_key(label), *[int(i) for i in index]])


def rng_for(seed, label, *index):
    """Return a fresh generator for the stream ``(seed, label, *index)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, label, *index)))


def subseed(seed, label, *index):
    """Integer sub-seed, for APIs that take a plain seed."""
    return int(seed_sequence(seed, label, *index).generate_state(1)[0])

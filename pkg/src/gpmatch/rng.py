"""Seed handling: one 64-bit root seed, named independent substreams."""

import zlib

import numpy as np

__all__ = ["substream"]


def substream(seed, name):
    """Return a Generator for the named substream of a root seed.

    The same (seed, name) pair always yields the same stream, and distinct
    names yield statistically independent streams, so components (basis
    sampling, homography sampling, ransac, noise) can be re-seeded
    independently of each other.
    """
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(tag,)))

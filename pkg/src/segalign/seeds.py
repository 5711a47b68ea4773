"""Named-stream seed splitting.

All randomness in the toolkit flows from a single root seed.  Each consumer
asks for a named stream; streams with different names are statistically
independent, and the same (root, name) pair always yields the same stream.
"""

import zlib

import numpy as np


def seed_for(root: int, name: str) -> int:
    """Derive a 64-bit child seed for the named stream."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(name.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_for(root: int, name: str) -> np.random.Generator:
    """A generator for the named stream under the given root seed."""
    return np.random.default_rng(seed_for(root, name))

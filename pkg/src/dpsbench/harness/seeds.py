"""Counter-based random streams derived from one master seed.

Every stream is ``SeedSequence(master, spawn_key=(purpose, *keys))`` where
``purpose`` is a fixed small integer and every key is either an integer or
the CRC-32 of a name (law, operator, method, denoiser).  A stream therefore
depends only on what it is for, never on the order in which work is done,
so items can be processed in any order or in parallel with identical
results.
"""

import zlib

import numpy as np

PURPOSES = {
    "operator": 1,
    "signals": 2,
    "noise": 3,
    "gold": 4,
    "tune": 5,
    "run": 6,
    "diagnose": 7,
}

SPLITS = {"train": 0, "val": 1, "test": 2}


def _key(k):
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def seed_sequence(master, purpose, *keys):
    return np.random.SeedSequence(int(master), spawn_key=(PURPOSES[purpose],) + tuple(_key(k) for k in keys))


def stream(master, purpose, *keys):
    """Independent generator for ``purpose`` and ``keys`` under ``master``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(master, purpose, *keys)))

"""Named random sub-streams derived from one master seed.

A stream is identified by a component label plus integer keys (seed index,
episode index, ...).  The same identity always yields the same generator,
independent of thread scheduling or the order in which streams are created.
"""
from __future__ import annotations

import zlib

import numpy as np


def label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def stream(master_seed: int, label: str, *keys: int) -> np.random.Generator:
    entropy = [int(master_seed), label_key(label), *(int(k) for k in keys)]
    if any(k < 0 for k in entropy):
        raise ValueError("stream keys must be nonnegative integers")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

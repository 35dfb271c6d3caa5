"""Named random substreams derived from one root seed."""

import zlib

import numpy as np


def substream(seed: int, *names: str) -> np.random.Generator:
    key = [int(seed)] + [zlib.crc32(n.encode("utf-8")) for n in names]
    return np.random.default_rng(np.random.SeedSequence(key))

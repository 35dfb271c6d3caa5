"""Shared random-tree helpers for the test suite."""

from pathlib import Path

import numpy as np
from hypothesis import strategies as st

from sgnet.trees import DependencyTree

DATA = Path(__file__).parent / "data"


def random_heads(rng: np.random.Generator, n: int) -> list[int]:
    """Random valid head list: attach each node of a shuffled order to an earlier one."""
    order = rng.permutation(n) + 1
    heads = [0] * n
    for k in range(1, n):
        heads[order[k] - 1] = int(order[rng.integers(k)])
    return heads


def random_tree(rng: np.random.Generator, n: int) -> DependencyTree:
    return DependencyTree.from_heads(random_heads(rng, n))


@st.composite
def trees(draw, max_size: int = 30):
    n = draw(st.integers(1, max_size))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_tree(np.random.default_rng(seed), n)

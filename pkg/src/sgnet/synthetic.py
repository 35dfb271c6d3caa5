"""Synthetic tree tasks, the toy vocabulary and batching."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rng import substream
from .sdoi import SdoiMask, build_sdoi_mask
from .trees import DependencyTree

PAD, CLS, SEP, UNK = 0, 1, 2, 3
N_RESERVED = 4
TASKS = ("head-predict", "span", "classify")


@dataclass(frozen=True)
class SyntheticExample:
    tree: DependencyTree
    token_ids: np.ndarray
    target: object


def depths(tree: DependencyTree) -> list[int]:
    heads = tree.heads
    out = []
    for i in range(1, len(heads) + 1):
        d = 0
        node = heads[i - 1]
        while node != 0:
            d += 1
            node = heads[node - 1]
        out.append(d)
    return out


def structural_ids(tree: DependencyTree, vocab_size: int = 64) -> np.ndarray:
    """``[CLS]`` followed by one id per token, derived from depth and out-degree."""
    d = depths(tree)
    children = [0] * len(tree.tokens)
    for h in tree.heads:
        if h:
            children[h - 1] += 1
    words = [(6 * min(depth, 9) + min(c, 5)) % (vocab_size - N_RESERVED) + N_RESERVED for depth, c in zip(d, children)]
    return np.array([CLS] + words, dtype=np.int64)


def random_tree(rng: np.random.Generator, n: int) -> DependencyTree:
    """Uniform-attachment tree over a random position order."""
    order = rng.permutation(n) + 1
    heads = [0] * n
    for k in range(1, n):
        heads[order[k] - 1] = int(order[rng.integers(k)])
    return DependencyTree.from_heads(heads)


def task_target(task: str, tree: DependencyTree):
    d = depths(tree)
    if task == "head-predict":
        # sequence position of each token's head; the root points at [CLS]
        return np.array([-1] + tree.heads, dtype=np.int64)
    if task == "span":
        deepest = int(np.argmax(d)) + 1
        return (deepest, deepest) if max(d) >= 3 else None
    if task == "classify":
        return min(max(d), 3) - 1 if max(d) >= 1 else 0
    raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


def gen_synthetic(task: str, n_examples: int, size_range: tuple[int, int], seed: int,
                  max_len: int = 64, vocab_size: int = 64, stream: str = "data") -> list[SyntheticExample]:
    lo, hi = size_range
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    if lo < 1 or hi < lo:
        raise ValueError(f"bad size range {size_range}")
    if hi + 1 > max_len:
        raise ValueError(f"sentence size {hi} plus [CLS] exceeds max_len {max_len}")
    rng = substream(seed, stream, task)
    out = []
    for _ in range(n_examples):
        tree = random_tree(rng, int(rng.integers(lo, hi + 1)))
        out.append(SyntheticExample(tree, structural_ids(tree, vocab_size), task_target(task, tree)))
    return out


def example_mask(tree: DependencyTree) -> SdoiMask:
    return build_sdoi_mask(tree, special_positions={0})


def split_subwords(form: str, width: int = 4) -> list[str]:
    """Deterministic toy splitter: chunks of ``width`` characters, continuation-marked."""
    if not form:
        return [form]
    pieces = [form[i:i + width] for i in range(0, len(form), width)]
    return [pieces[0]] + ["##" + p for p in pieces[1:]]


@dataclass
class Batch:
    ids: np.ndarray
    pad_mask: np.ndarray
    sdoi: np.ndarray
    targets: np.ndarray


def collate(examples: Sequence[SyntheticExample], masks: Sequence[SdoiMask], task: str) -> Batch:
    """Pad to the longest sequence; padded positions get unit SDOI rows."""
    B = len(examples)
    N = max(len(ex.token_ids) for ex in examples)
    ids = np.full((B, N), PAD, dtype=np.int64)
    pad = np.zeros((B, N), dtype=bool)
    sdoi = np.broadcast_to(np.eye(N, dtype=bool), (B, N, N)).copy()
    if task == "head-predict":
        targets = np.full((B, N), -1, dtype=np.int64)
    elif task == "span":
        targets = np.zeros((B, 3), dtype=np.int64)
    else:
        targets = np.zeros(B, dtype=np.int64)
    for b, (ex, m) in enumerate(zip(examples, masks)):
        n = len(ex.token_ids)
        ids[b, :n] = ex.token_ids
        pad[b, :n] = True
        sdoi[b, :n, :n] = m.bits
        if task == "head-predict":
            targets[b, :n] = ex.target
        elif task == "span":
            # (start, end, unanswerable)
            targets[b] = (0, 0, 1) if ex.target is None else (*ex.target, 0)
        else:
            targets[b] = ex.target
    return Batch(ids, pad, sdoi, targets)


def n_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)

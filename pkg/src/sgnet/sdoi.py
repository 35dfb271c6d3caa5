"""Syntactic-dependency-of-interest masks.

Mask rows and columns are 0-based sequence positions. Tree tokens keep
their 1-based CoNLL-U indices; :func:`build_sdoi_mask` lays them out in
the positions not taken by special tokens.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .trees import DependencyTree, TreeError, check_tree


@dataclass(frozen=True)
class SdoiMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1]:
            raise ValueError(f"mask must be square, got shape {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    def row(self, i: int) -> set[int]:
        return set(np.flatnonzero(self.bits[i]).tolist())

    def __eq__(self, other):
        return isinstance(other, SdoiMask) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "rows": self.bits.astype(int).tolist()}, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SdoiMask":
        obj = json.loads(text)
        bits = np.array(obj["rows"], dtype=bool).reshape(obj["n"], obj["n"])
        return cls(bits)

    def to_rle(self) -> bytes:
        """Run-length encoding of the row-major bits, starting with a zero run."""
        flat = self.bits.ravel()
        runs = []
        current = False
        count = 0
        for b in flat:
            if b == current:
                count += 1
            else:
                runs.append(count)
                current = not current
                count = 1
        runs.append(count)
        return b"SDOI" + struct.pack("<II", self.n, len(runs)) + struct.pack(f"<{len(runs)}I", *runs)

    @classmethod
    def from_rle(cls, data: bytes) -> "SdoiMask":
        if data[:4] != b"SDOI":
            raise ValueError("not an SDOI run-length file")
        n, k = struct.unpack_from("<II", data, 4)
        runs = struct.unpack_from(f"<{k}I", data, 12)
        if sum(runs) != n * n:
            raise ValueError("run lengths do not cover the mask")
        flat = np.repeat(np.arange(k) % 2 == 1, runs)
        return cls(flat.reshape(n, n))


@dataclass(frozen=True)
class SubwordAlignment:
    """Half-open subword ranges, one per word, in word order."""

    word_to_subwords: tuple[tuple[int, int], ...]

    def __post_init__(self):
        expect = 0
        for start, stop in self.word_to_subwords:
            if start != expect or stop <= start:
                raise ValueError(f"non-contiguous subword range ({start}, {stop})")
            expect = stop

    @classmethod
    def from_counts(cls, counts: Iterable[int]) -> "SubwordAlignment":
        ranges = []
        start = 0
        for c in counts:
            ranges.append((start, start + c))
            start += c
        return cls(tuple(ranges))

    @property
    def n_words(self) -> int:
        return len(self.word_to_subwords)

    @property
    def n_subwords(self) -> int:
        return self.word_to_subwords[-1][1] if self.word_to_subwords else 0

    def word_of(self) -> np.ndarray:
        """Word index for every subword position."""
        return np.repeat(np.arange(self.n_words), [b - a for a, b in self.word_to_subwords])


def ancestors(tree: DependencyTree, i: int) -> set[int]:
    """Indices on the head chain above token ``i`` (1-based), excluding ``i``."""
    n = len(tree.tokens)
    if not 1 <= i <= n:
        raise IndexError(f"token index {i} out of range 1..{n}")
    if tree.tokens[i - 1].is_special:
        raise ValueError(f"token {i} is a special token")
    out = set()
    node = tree.tokens[i - 1].head
    while node != 0:
        if node in out:
            raise TreeError(f"cycle through token {node}", node)
        out.add(node)
        node = tree.tokens[node - 1].head
    return out


def build_sdoi_mask(tree: DependencyTree, special_positions: Iterable[int] = ()) -> SdoiMask:
    """SDOI mask over the merged sequence of specials and tree tokens.

    ``special_positions`` are 0-based positions in the final sequence; the
    tree's tokens fill the remaining positions in order. Special positions,
    and tokens flagged ``is_special``, only see themselves.
    """
    check_tree(tree)
    special = sorted(set(special_positions))
    n = len(tree.tokens) + len(special)
    if special and (special[0] < 0 or special[-1] >= n):
        raise ValueError(f"special positions {special} overlap or fall outside a length-{n} sequence")
    taken = set(special)
    slots = [p for p in range(n) if p not in taken]
    # token index k (1-based) sits at sequence position slots[k - 1]
    heads = np.array(tree.heads, dtype=np.int64)
    bits = np.eye(n, dtype=bool)
    # walk all chains upward together; depth is bounded by the token count
    cursor = heads.copy()
    rows = np.array(slots, dtype=np.int64)
    flagged = np.array([t.is_special for t in tree.tokens], dtype=bool)
    cursor[flagged] = 0
    slot_arr = np.array([0] + slots, dtype=np.int64)
    for _ in range(len(heads)):
        live = cursor > 0
        if not live.any():
            break
        bits[rows[live], slot_arr[cursor[live]]] = True
        cursor[live] = heads[cursor[live] - 1]
    return SdoiMask(bits)


def project_to_subwords(mask: SdoiMask, align: SubwordAlignment, mode: str = "shared") -> SdoiMask:
    """Expand a word-level mask to subword granularity.

    ``shared``: every subword inherits its word's row and column.
    ``first-child``: the trailing subwords of a word hang off its first
    subword, which takes the word's place in the tree.
    """
    if align.n_words != mask.n:
        raise ValueError(f"alignment covers {align.n_words} words, mask has {mask.n}")
    word = align.word_of()
    expanded = mask.bits[np.ix_(word, word)]
    if mode == "shared":
        return SdoiMask(expanded)
    if mode == "first-child":
        first = np.zeros(align.n_subwords, dtype=bool)
        first[[a for a, _ in align.word_to_subwords]] = True
        bits = expanded & first[None, :]
        np.fill_diagonal(bits, True)
        return SdoiMask(bits)
    raise ValueError(f"unknown subword mode {mode!r}")


def block_diagonal_merge(masks: Sequence[SdoiMask]) -> SdoiMask:
    if not masks:
        raise ValueError("cannot merge an empty list of masks")
    n = sum(m.n for m in masks)
    bits = np.zeros((n, n), dtype=bool)
    offset = 0
    for m in masks:
        bits[offset:offset + m.n, offset:offset + m.n] = m.bits
        offset += m.n
    return SdoiMask(bits)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def degrade_tree(tree: DependencyTree, p: float, seed: int) -> DependencyTree:
    """Reassign the heads of ``round(p * n)`` non-root tokens at random.

    New heads are drawn uniformly from the non-special tokens other than the
    token itself and its current head; draws that would close a cycle are
    rejected. A token with no acyclic alternative keeps its head.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"degradation level {p} outside [0, 1]")
    check_tree(tree)
    heads = tree.heads
    candidates = [t.index for t in tree.tokens if not t.is_special and t.head != 0]
    k = min(_round_half_up(p * len(tree.tokens)), len(candidates))
    if k == 0:
        return tree
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(candidates, size=k, replace=False).tolist())
    valid = [t.index for t in tree.tokens if not t.is_special]
    for i in chosen:
        pool = [j for j in valid if j != i and j != heads[i - 1]]
        while pool:
            pick = pool[int(rng.integers(len(pool)))]
            if not _reaches(heads, pick, i):
                heads[i - 1] = pick
                break
            pool.remove(pick)
    return tree.with_heads(heads)


def _reaches(heads: list[int], start: int, target: int) -> bool:
    node = start
    while node != 0:
        if node == target:
            return True
        node = heads[node - 1]
    return False

"""Dependency trees and CoNLL-U ingestion.

Only the topology columns are consumed: ID (1), FORM (2), HEAD (7) and
DEPREL (8). Multiword ranges ("3-4") and empty nodes ("8.1") are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable


class TreeError(ValueError):
    """A tree violates one of the dependency-tree invariants."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class ConlluError(ValueError):
    """Malformed input, tagged with the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Token:
    index: int
    form: str
    head: int
    deprel: str = "_"
    is_special: bool = False


@dataclass(frozen=True)
class DependencyTree:
    tokens: tuple[Token, ...]
    root_index: int = field(default=0)

    @classmethod
    def from_heads(cls, heads: Iterable[int], forms: Iterable[str] | None = None) -> "DependencyTree":
        """Build a tree from a 1-based head list (0 marks the root)."""
        heads = list(heads)
        forms = list(forms) if forms is not None else [f"w{i}" for i in range(1, len(heads) + 1)]
        tokens = tuple(Token(i, f, h) for i, (f, h) in enumerate(zip(forms, heads), start=1))
        return cls.build(tokens)

    @classmethod
    def build(cls, tokens: Iterable[Token]) -> "DependencyTree":
        tokens = tuple(tokens)
        roots = [t.index for t in tokens if t.head == 0 and not t.is_special]
        return cls(tokens, roots[0] if roots else 0)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def heads(self) -> list[int]:
        return [t.head for t in self.tokens]

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]

    def with_heads(self, heads: Iterable[int]) -> "DependencyTree":
        tokens = [Token(t.index, t.form, h, t.deprel, t.is_special) for t, h in zip(self.tokens, heads)]
        return DependencyTree.build(tokens)


def validate_tree(tree: DependencyTree) -> str | None:
    """Return None when the tree is well formed, else a diagnostic.

    The diagnostic names the first violated invariant and the offending
    token index.
    """
    try:
        check_tree(tree)
    except TreeError as exc:
        return str(exc)
    return None


def check_tree(tree: DependencyTree) -> None:
    """Raise TreeError on the first violated invariant."""
    n = len(tree.tokens)
    if n == 0:
        raise TreeError("no root: empty tree")
    special = set()
    for pos, tok in enumerate(tree.tokens, start=1):
        if tok.index != pos:
            raise TreeError(f"token index {tok.index} at position {pos}", tok.index)
        if tok.is_special:
            special.add(tok.index)
    for tok in tree.tokens:
        if tok.is_special:
            if tok.head != 0:
                raise TreeError(f"special token {tok.index} has head {tok.head}", tok.index)
            continue
        if tok.head == tok.index:
            raise TreeError(f"token {tok.index} is its own head", tok.index)
        if tok.head < 0 or tok.head > n or tok.head in special:
            raise TreeError(f"head out of range: token {tok.index} has head {tok.head}", tok.index)
    roots = [t.index for t in tree.tokens if not t.is_special and t.head == 0]
    if not roots:
        if len(special) == n:
            return
        raise TreeError("no root", None)
    if len(roots) > 1:
        raise TreeError(f"multiple roots: tokens {roots}", roots[1])
    if tree.root_index != roots[0]:
        raise TreeError(f"root_index {tree.root_index} but root is {roots[0]}", roots[0])
    heads = tree.heads
    # 0 = unvisited, 1 = on current path, 2 = reaches the root
    state = [0] * (n + 1)
    for start in range(1, n + 1):
        if start in special or state[start]:
            continue
        path = []
        node = start
        while node != 0 and state[node] == 0:
            state[node] = 1
            path.append(node)
            node = heads[node - 1]
        if node != 0 and state[node] == 1:
            raise TreeError(f"cycle through token {node}", node)
        for p in path:
            state[p] = 2


def _parse_block(lines: list[tuple[int, str]], minimal: bool) -> DependencyTree:
    tokens: list[Token] = []
    seen: set[int] = set()
    need = 3 if minimal else 8
    for lineno, line in lines:
        cols = line.split("\t")
        if cols[0] and ("-" in cols[0] or "." in cols[0]):
            continue
        if len(cols) < need:
            raise ConlluError(f"expected at least {need} columns, got {len(cols)}", lineno)
        try:
            index = int(cols[0])
        except ValueError:
            raise ConlluError(f"non-integer index {cols[0]!r}", lineno) from None
        head_col = cols[2] if minimal else cols[6]
        try:
            head = int(head_col)
        except ValueError:
            raise ConlluError(f"non-integer head {head_col!r}", lineno) from None
        if index in seen:
            raise ConlluError(f"duplicate index {index}", lineno)
        seen.add(index)
        deprel = "_" if minimal else cols[7]
        tokens.append(Token(index, cols[1], head, deprel))
    tree = DependencyTree.build(tokens)
    try:
        check_tree(tree)
    except TreeError as exc:
        bad = next((ln for ln, line in lines if exc.index is not None and line.split("\t")[0] == str(exc.index)), lines[0][0])
        raise ConlluError(f"invalid tree starting at line {lines[0][0]}: {exc}", bad) from exc
    return tree


def _blocks(text: str) -> Iterable[list[tuple[int, str]]]:
    block: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            if block:
                yield block
                block = []
            continue
        if line.startswith("#"):
            continue
        block.append((lineno, line))
    if block:
        yield block


def parse_conllu(text: str) -> list[DependencyTree]:
    return [_parse_block(b, minimal=False) for b in _blocks(text)]


def parse_minimal(text: str) -> list[DependencyTree]:
    """Parse the three-column ``index\\tform\\thead`` format."""
    return [_parse_block(b, minimal=True) for b in _blocks(text)]


def read_trees(path: str | Path) -> list[DependencyTree]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".conllu":
        return parse_conllu(text)
    return parse_minimal(text)


def to_conllu(trees: Iterable[DependencyTree]) -> str:
    out = []
    for tree in trees:
        for t in tree.tokens:
            out.append("\t".join([str(t.index), t.form, "_", "_", "_", "_", str(t.head), t.deprel, "_", "_"]))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")

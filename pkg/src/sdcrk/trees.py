"""Canonical unordered rooted trees and the combinatorics behind order conditions.

Trees are immutable and hash-consed into a canonical form: the children of
every vertex are stored sorted under a fixed total order (lexicographic on
the nested-parenthesis encoding), so two trees built from permuted child
lists compare and hash equal.  This makes trees directly usable as
memoization keys for elementary-weight computations.
"""

from __future__ import annotations

import math
from functools import lru_cache
from itertools import combinations_with_replacement, groupby
from typing import Iterable, Iterator

from .errors import ResourceLimitError

#: Largest tree size `enumerate_trees` will expand (1.7M trees at 18).
MAX_ENUMERATION_SIZE = 18


class RootedTree:
    """An unordered rooted tree, identified by its canonical parenthesization.

    ``children`` is the (canonically sorted) tuple of subtrees attached to
    the root; a leaf has no children.
    """

    __slots__ = ("children", "size", "height", "_word", "_hash", "__weakref__")

    def __init__(self, children: Iterable["RootedTree"] = ()):
        kids = tuple(sorted(children, key=lambda t: t._word))
        self.children = kids
        self.size = 1 + sum(k.size for k in kids)
        self.height = 1 + max((k.height for k in kids), default=0)
        self._word = "[" + "".join(k._word for k in kids) + "]"
        self._hash = hash(self._word)

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        return isinstance(other, RootedTree) and self._word == other._word

    def __lt__(self, other: "RootedTree") -> bool:
        return (self.size, self._word) < (other.size, other._word)

    def __repr__(self) -> str:
        return f"RootedTree({self._word!r})"

    def to_parens(self) -> str:
        """Nested-parenthesis encoding, e.g. ``[[][]]`` for B+({.,.})."""
        return self._word

    @property
    def is_bamboo(self) -> bool:
        return self.size == self.height


#: The single-vertex tree.
LEAF = RootedTree()

#: A forest is a multiset of trees; canonically a sorted tuple.
Forest = tuple


def forest(trees: Iterable[RootedTree]) -> Forest:
    """Canonical (sorted) forest from an iterable of trees."""
    return tuple(sorted(trees, key=lambda t: t._word))


def forest_size(f: Forest) -> int:
    return sum(t.size for t in f)


def b_plus(f: Iterable[RootedTree]) -> RootedTree:
    """Attach all roots of a forest to a new root; ``b_plus(()) == LEAF``."""
    return RootedTree(f)


def bamboo(height: int) -> RootedTree:
    """The branchless tree of the given height (and equal size)."""
    if height < 1:
        raise ValueError(f"bamboo height must be >= 1, got {height}")
    t = LEAF
    for _ in range(height - 1):
        t = RootedTree((t,))
    return t


def from_parens(word: str) -> RootedTree:
    """Parse the nested-parenthesis encoding produced by ``to_parens``."""
    pos = 0

    def parse() -> RootedTree:
        nonlocal pos
        if pos >= len(word) or word[pos] != "[":
            raise ValueError(f"expected '[' at position {pos} in {word!r}")
        pos += 1
        kids = []
        while pos < len(word) and word[pos] == "[":
            kids.append(parse())
        if pos >= len(word) or word[pos] != "]":
            raise ValueError(f"expected ']' at position {pos} in {word!r}")
        pos += 1
        return RootedTree(kids)

    tree = parse()
    if pos != len(word):
        raise ValueError(f"trailing characters after tree in {word!r}")
    return tree


@lru_cache(maxsize=None)
def gamma(tree: RootedTree) -> int:
    """Tree factorial: gamma(leaf) = 1, gamma(t) = |t| * prod gamma(children)."""
    g = tree.size
    for child in tree.children:
        g *= gamma(child)
    return g


@lru_cache(maxsize=None)
def sigma(tree: RootedTree) -> int:
    """Symmetry: the order of the automorphism group of the tree."""
    s = 1
    for child, group in groupby(tree.children):
        m = sum(1 for _ in group)
        s *= math.factorial(m) * sigma(child) ** m
    return s


def trees_by_size(max_size: int, *, cap: int = MAX_ENUMERATION_SIZE) -> dict[int, tuple[RootedTree, ...]]:
    """All canonical trees up to ``max_size``, keyed and sorted by size."""
    if max_size < 1:
        raise ValueError(f"max_size must be >= 1, got {max_size}")
    if max_size > cap:
        raise ResourceLimitError(
            f"tree enumeration capped at size {cap}, requested {max_size}"
        )
    by_size: dict[int, tuple[RootedTree, ...]] = {1: (LEAF,)}

    def forests(total: int, max_part: int) -> Iterator[tuple[RootedTree, ...]]:
        # multisets of trees with sizes summing to `total`, parts <= max_part
        if total == 0:
            yield ()
            return
        for part in range(min(total, max_part), 0, -1):
            for n in range(1, total // part + 1):
                for combo in combinations_with_replacement(by_size[part], n):
                    for rest in forests(total - n * part, part - 1):
                        yield combo + rest

    for size in range(2, max_size + 1):
        found = {t._word: t for f in forests(size - 1, size - 1) for t in (RootedTree(f),)}
        by_size[size] = tuple(sorted(found.values(), key=lambda t: t._word))
    return by_size


def enumerate_trees(max_size: int, *, cap: int = MAX_ENUMERATION_SIZE) -> list[RootedTree]:
    """All canonical rooted trees of size <= ``max_size``, grouped by size.

    Ordering is deterministic: ascending size, then lexicographic on the
    parenthesis encoding, which keeps golden files stable.
    """
    by_size = trees_by_size(max_size, cap=cap)
    return [t for size in range(1, max_size + 1) for t in by_size[size]]

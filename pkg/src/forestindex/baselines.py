"""Baseline entity retrievers: naive traversal and per-node Bloom pruning.

All retrievers answer the same question as the cuckoo index: every
address of a queried label across the forest. They exist to be compared
against, so each also reports how much work it did (nodes visited,
filters probed).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

from .forest import Forest, NodeAddress, canonical_label

DEFAULT_BITS_PER_ELEMENT = 10
DEFAULT_HASH_COUNT = 4
MIN_FILTER_BITS = 64

_BSALT_1 = b"\x6a\x09\xe6\x67"
_BSALT_2 = b"\xbb\x67\xae\x85"


def bloom_hash_pair(label: str) -> tuple[int, int]:
    """Two independent 32-bit hashes; probe positions derive from these.

    The second hash is forced odd so successive probe positions cannot
    collapse onto one bit for even filter sizes.
    """
    data = label.encode("utf-8")
    return zlib.crc32(_BSALT_1 + data), zlib.crc32(_BSALT_2 + data) | 1


class BloomFilter:
    """Plain Bloom filter over a bytearray bit field."""

    __slots__ = ("bit_count", "hash_count", "_bits")

    def __init__(self, bit_count: int, hash_count: int = DEFAULT_HASH_COUNT):
        self.bit_count = max(MIN_FILTER_BITS, bit_count)
        self.hash_count = hash_count
        self._bits = bytearray((self.bit_count + 7) // 8)

    @classmethod
    def for_items(
        cls,
        item_count: int,
        bits_per_element: int = DEFAULT_BITS_PER_ELEMENT,
        hash_count: int = DEFAULT_HASH_COUNT,
    ) -> BloomFilter:
        return cls(item_count * bits_per_element, hash_count)

    def add_pair(self, h1: int, h2: int) -> None:
        bits = self._bits
        m = self.bit_count
        for i in range(self.hash_count):
            pos = (h1 + i * h2) % m
            bits[pos >> 3] |= 1 << (pos & 7)

    def query_pair(self, h1: int, h2: int) -> bool:
        bits = self._bits
        m = self.bit_count
        for i in range(self.hash_count):
            pos = (h1 + i * h2) % m
            if not bits[pos >> 3] >> (pos & 7) & 1:
                return False
        return True

    def add(self, label: str) -> None:
        self.add_pair(*bloom_hash_pair(label))

    def query(self, label: str) -> bool:
        return self.query_pair(*bloom_hash_pair(label))


@dataclass
class LocateStats:
    """Work counters for one locate call."""

    visits: int = 0
    probes: int = 0


class BloomAnnotatedForest:
    """A forest whose every node carries a filter over its subtree labels.

    ``leaf_children_only[t][i]`` is precomputed so the improved retriever
    can skip filter probes at nodes just above the leaf level.
    """

    def __init__(
        self,
        forest: Forest,
        filters: list[list[BloomFilter]],
        leaf_children_only: list[list[bool]],
        bits_per_element: int,
        hash_count: int,
    ):
        self.forest = forest
        self.filters = filters
        self.leaf_children_only = leaf_children_only
        self.bits_per_element = bits_per_element
        self.hash_count = hash_count


def bloom_build(
    forest: Forest,
    bits_per_element: int = DEFAULT_BITS_PER_ELEMENT,
    hash_count: int = DEFAULT_HASH_COUNT,
) -> BloomAnnotatedForest:
    """Annotate every node with a Bloom filter of its subtree's labels.

    Each filter is sized to its own subtree (count times bits_per_element,
    floor of MIN_FILTER_BITS), so leaves stay tiny while roots summarize
    the whole tree.
    """
    pair_cache: dict[str, tuple[int, int]] = {}
    all_filters: list[list[BloomFilter]] = []
    all_leaf_flags: list[list[bool]] = []
    for tree in forest.trees:
        children = tree.children
        n = len(tree)
        # Children-first order via a reversed preorder stack walk.
        order: list[int] = []
        stack = [tree.root]
        while stack:
            node = stack.pop()
            order.append(node)
            stack.extend(children[node])
        subtree_sets: list[set[str] | None] = [None] * n
        filters: list[BloomFilter] = [None] * n  # type: ignore[list-item]
        leaf_flags = [
            bool(kids) and all(not children[c] for c in kids) for kids in children
        ]
        for node in reversed(order):
            labels = {tree.labels[node]}
            for child in children[node]:
                labels.update(subtree_sets[child])
                subtree_sets[child] = None  # free as soon as merged
            subtree_sets[node] = labels
            filt = BloomFilter.for_items(len(labels), bits_per_element, hash_count)
            for label in labels:
                pair = pair_cache.get(label)
                if pair is None:
                    pair = pair_cache[label] = bloom_hash_pair(label)
                filt.add_pair(*pair)
            filters[node] = filt
        all_filters.append(filters)
        all_leaf_flags.append(leaf_flags)
    return BloomAnnotatedForest(
        forest, all_filters, all_leaf_flags, bits_per_element, hash_count
    )


def naive_locate_stats(
    forest: Forest, label: str
) -> tuple[list[NodeAddress], LocateStats]:
    """Breadth-first scan of every tree; no pruning of any kind."""
    label = canonical_label(label)
    found: list[NodeAddress] = []
    visits = 0
    for t, tree in enumerate(forest.trees):
        labels = tree.labels
        children = tree.children
        level = [tree.root]
        while level:
            visits += len(level)
            next_level: list[int] = []
            for node in level:
                if labels[node] == label:
                    found.append(NodeAddress(t, node))
                next_level.extend(children[node])
            level = next_level
    found.sort()
    return found, LocateStats(visits=visits)


def bloom_locate_stats(
    ann: BloomAnnotatedForest, label: str
) -> tuple[list[NodeAddress], LocateStats]:
    """Descend only where a subtree filter reports the label present.

    A tree whose root filter rejects costs one probe and zero visits.
    Filters never miss stored labels, so results match the naive scan
    exactly; false positives only cost wasted descents.
    """
    label = canonical_label(label)
    h1, h2 = bloom_hash_pair(label)
    found: list[NodeAddress] = []
    visits = 0
    probes = 0
    for t, tree in enumerate(ann.forest.trees):
        filters = ann.filters[t]
        probes += 1
        if not filters[tree.root].query_pair(h1, h2):
            continue
        labels = tree.labels
        children = tree.children
        stack = [tree.root]
        while stack:
            node = stack.pop()
            visits += 1
            if labels[node] == label:
                found.append(NodeAddress(t, node))
            for child in children[node]:
                probes += 1
                if filters[child].query_pair(h1, h2):
                    stack.append(child)
    found.sort()
    return found, LocateStats(visits=visits, probes=probes)


def improved_bloom_locate_stats(
    ann: BloomAnnotatedForest, label: str
) -> tuple[list[NodeAddress], LocateStats]:
    """Bloom descent that skips child filters when all children are leaves.

    A leaf's filter only ever holds the leaf's own label, so probing it is
    strictly more work than comparing that label directly. Whenever every
    child of a node is a leaf, the children are checked by comparison and
    the filter probes are skipped.
    """
    label = canonical_label(label)
    h1, h2 = bloom_hash_pair(label)
    found: list[NodeAddress] = []
    visits = 0
    probes = 0
    for t, tree in enumerate(ann.forest.trees):
        filters = ann.filters[t]
        probes += 1
        if not filters[tree.root].query_pair(h1, h2):
            continue
        labels = tree.labels
        children = tree.children
        leaf_only = ann.leaf_children_only[t]
        stack = [tree.root]
        while stack:
            node = stack.pop()
            visits += 1
            if labels[node] == label:
                found.append(NodeAddress(t, node))
            if leaf_only[node]:
                for child in children[node]:
                    visits += 1
                    if labels[child] == label:
                        found.append(NodeAddress(t, child))
                continue
            for child in children[node]:
                probes += 1
                if filters[child].query_pair(h1, h2):
                    stack.append(child)
    found.sort()
    return found, LocateStats(visits=visits, probes=probes)


def naive_locate(forest: Forest, label: str) -> list[NodeAddress]:
    return naive_locate_stats(forest, label)[0]


def bloom_locate(ann: BloomAnnotatedForest, label: str) -> list[NodeAddress]:
    return bloom_locate_stats(ann, label)[0]


def improved_bloom_locate(ann: BloomAnnotatedForest, label: str) -> list[NodeAddress]:
    return improved_bloom_locate_stats(ann, label)[0]

"""Vantage-point tree over TLSH digests.

The tree is partitioned with :func:`~vtfeed.tlsh_metric.bound_distance`, a
metric lower bound of the TLSH score, because the TLSH score itself breaks
the triangle inequality. Radius queries use the real TLSH score for
membership and the bound for pruning.

Exact queries descend every child the triangle inequality cannot exclude.
Approximate queries descend only the child on the query's side of the split
radius (and still test each visited vantage), so they return a subset of the
exact answer.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from ..tlsh_metric import DigestArray, TlshDigest, bound_distance, distance

DEFAULT_LEAF_SIZE = 16


@dataclass
class Leaf:
    indices: np.ndarray


@dataclass
class Node:
    vantage: int
    radius: int
    inside: Optional["TreeNode"]
    outside: Optional["TreeNode"]


TreeNode = Union[Node, Leaf]


class VPTree:
    def __init__(self, digests: Sequence[TlshDigest], seed: int = 0, leaf_size: int = DEFAULT_LEAF_SIZE):
        self.digests = list(digests)
        self.array = DigestArray(self.digests)
        self.leaf_size = max(1, leaf_size)
        rng = random.Random(seed)
        self.root: Optional[TreeNode] = self._build(np.arange(len(self.digests)), rng) if self.digests else None

    def __len__(self) -> int:
        return len(self.digests)

    def _build(self, idx: np.ndarray, rng: random.Random) -> Optional[TreeNode]:
        if len(idx) == 0:
            return None
        if len(idx) <= self.leaf_size:
            return Leaf(np.sort(idx))
        pos = rng.randrange(len(idx))
        vantage = int(idx[pos])
        rest = np.delete(idx, pos)
        d = self.array.bound_distances(self.digests[vantage], rest)
        radius = int(np.median(d))
        mask = d <= radius
        return Node(vantage, radius, self._build(rest[mask], rng), self._build(rest[~mask], rng))


def build_vptree(digests: Sequence[TlshDigest], seed: int = 0, leaf_size: int = DEFAULT_LEAF_SIZE) -> VPTree:
    return VPTree(digests, seed=seed, leaf_size=leaf_size)


def radius_query(tree: VPTree, q: TlshDigest, r: int, exact: bool = True) -> list[int]:
    """Indices of indexed digests with TLSH distance to ``q`` at most ``r``."""
    out: list[int] = []
    stack = [tree.root] if tree.root is not None else []
    digests = tree.digests
    while stack:
        node = stack.pop()
        if isinstance(node, Leaf):
            out.extend(int(i) for i in node.indices if distance(q, digests[i]) <= r)
            continue
        v = digests[node.vantage]
        dv = bound_distance(q, v)
        if dv <= r and distance(q, v) <= r:
            out.append(node.vantage)
        if exact:
            if node.outside is not None and node.radius - dv < r:
                stack.append(node.outside)
            if node.inside is not None and dv - node.radius <= r:
                stack.append(node.inside)
        else:
            child = node.inside if dv <= node.radius else node.outside
            if child is not None:
                stack.append(child)
    out.sort()
    return out


def radius_join(tree: VPTree, r: int, exact: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """All pairs ``(i, j)``, ``i < j``, that per-point :func:`radius_query`
    calls over the indexed digests would connect.

    Every indexed digest is pushed through the tree at once; each node
    applies the same descent rule as :func:`radius_query` to the whole batch.
    """
    n = len(tree)
    src: list[np.ndarray] = []
    dst: list[np.ndarray] = []
    if tree.root is None:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    arr, digests = tree.array, tree.digests
    stack: list[tuple[TreeNode, np.ndarray]] = [(tree.root, np.arange(n))]
    while stack:
        node, queries = stack.pop()
        if len(queries) == 0:
            continue
        if isinstance(node, Leaf):
            for j in node.indices:
                hit = queries[arr.distances(digests[j], queries) <= r]
                if len(hit):
                    src.append(hit)
                    dst.append(np.full(len(hit), j))
            continue
        v = node.vantage
        dv = arr.bound_distances(digests[v], queries)
        near = dv <= r
        if near.any():
            cand = queries[near]
            hit = cand[arr.distances(digests[v], cand) <= r]
            src.append(hit)
            dst.append(np.full(len(hit), v))
        if exact:
            go_out = node.radius - dv < r
            go_in = dv - node.radius <= r
        else:
            go_in = dv <= node.radius
            go_out = ~go_in
        if node.outside is not None:
            stack.append((node.outside, queries[go_out]))
        if node.inside is not None:
            stack.append((node.inside, queries[go_in]))
    if not src:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    a = np.concatenate(src)
    b = np.concatenate(dst)
    keep = a != b
    a, b = a[keep], b[keep]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    pairs = np.unique(lo * n + hi)
    return pairs // n, pairs % n


def check_invariants(tree: VPTree) -> None:
    """Raise AssertionError unless every digest is reachable once and every
    split respects its radius."""
    seen: list[int] = []

    def members(node: Optional[TreeNode]) -> list[int]:
        if node is None:
            return []
        if isinstance(node, Leaf):
            return [int(i) for i in node.indices]
        return [node.vantage] + members(node.inside) + members(node.outside)

    def walk(node: Optional[TreeNode]) -> None:
        if node is None:
            return
        if isinstance(node, Leaf):
            seen.extend(int(i) for i in node.indices)
            return
        seen.append(node.vantage)
        v = tree.digests[node.vantage]
        for i in members(node.inside):
            assert bound_distance(v, tree.digests[i]) <= node.radius
        for i in members(node.outside):
            assert bound_distance(v, tree.digests[i]) > node.radius
        walk(node.inside)
        walk(node.outside)

    walk(tree.root)
    assert sorted(seen) == list(range(len(tree))), "digest reachable zero or several times"

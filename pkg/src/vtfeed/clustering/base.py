from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

NULL_FEATURE = "null-feature"
UNIQUE_VALUE = "unique-value"
NO_REASON = "none"
REASONS = (NULL_FEATURE, UNIQUE_VALUE, NO_REASON)


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True

    def groups(self) -> list[list[int]]:
        out: dict[int, list[int]] = {}
        for i in range(len(self.parent)):
            out.setdefault(self.find(i), []).append(i)
        return list(out.values())


@dataclass
class Clustering:
    """A partition of sample ids. Cluster ids are list positions."""

    members: list[tuple[str, ...]] = field(default_factory=list)
    reasons: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.members) != len(self.reasons):
            raise ValueError("members and reasons differ in length")

    def __len__(self) -> int:
        return len(self.members)

    @property
    def assignment(self) -> dict[str, int]:
        return {sha: cid for cid, group in enumerate(self.members) for sha in group}

    def sizes(self) -> list[int]:
        return [len(m) for m in self.members]

    def partition(self) -> set[frozenset[str]]:
        return {frozenset(m) for m in self.members}

    def validate(self) -> None:
        seen: set[str] = set()
        for cid, group in enumerate(self.members):
            if not group:
                raise ValueError(f"cluster {cid} is empty")
            if self.reasons[cid] not in REASONS:
                raise ValueError(f"cluster {cid}: bad singleton reason {self.reasons[cid]!r}")
            for sha in group:
                if sha in seen:
                    raise ValueError(f"{sha} assigned to more than one cluster")
                seen.add(sha)

    @classmethod
    def from_groups(cls, groups: Iterable[Sequence[str]], reasons: Iterable[str]) -> "Clustering":
        """Build a clustering whose ids follow the smallest member sha256."""
        pairs = sorted((tuple(sorted(g)), r) for g, r in zip(groups, reasons))
        return cls([p[0] for p in pairs], [p[1] for p in pairs])

    def rows(self) -> Iterator[tuple[int, str, str]]:
        for cid, group in enumerate(self.members):
            for sha in group:
                yield cid, sha, self.reasons[cid]


def write_clusters(path: str | os.PathLike, clustering: Clustering) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cid, sha, reason in clustering.rows():
            fh.write(f"{cid}\t{sha}\t{reason}\n")


def read_clusters(path: str | os.PathLike) -> Clustering:
    members: list[list[str]] = []
    reasons: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or not parts[0].isdigit() or parts[2] not in REASONS:
                raise ValueError(f"{path}:{lineno}: expected cluster_id<TAB>sha256<TAB>reason")
            cid = int(parts[0])
            if cid == len(members):
                members.append([])
                reasons.append(parts[2])
            elif cid != len(members) - 1:
                raise ValueError(f"{path}:{lineno}: cluster ids must be dense and sorted")
            members[cid].append(parts[1])
    return Clustering([tuple(m) for m in members], reasons)

"""Threshold-based agglomerative clustering over TLSH digests (HAC-T).

Samples are linked when their TLSH distance is at most ``cdist`` and the
clusters are the connected components of those links. Neighbours come from
vantage-point tree radius queries: ``exact=True`` (HAC-T-opt) finds every
link, ``exact=False`` finds a subset, yielding a refinement of the exact
clustering.
"""
from __future__ import annotations

from typing import Sequence, Union

from ..tlsh_metric import TlshDigest, parse_digest
from .base import NO_REASON, NULL_FEATURE, UNIQUE_VALUE, Clustering, UnionFind
from .vptree import DEFAULT_LEAF_SIZE, build_vptree, radius_join

DEFAULT_CDIST = 30


def hact_cluster(
    samples: Sequence[tuple[str, Union[str, TlshDigest, None]]],
    cdist: int = DEFAULT_CDIST,
    exact: bool = True,
    seed: int = 0,
    leaf_size: int = DEFAULT_LEAF_SIZE,
) -> Clustering:
    """Cluster ``(sha256, tlsh)`` pairs; NULL digests become null-feature singletons."""
    shas: list[str] = []
    digests: list[TlshDigest] = []
    nulls: list[str] = []
    seen: set[str] = set()
    for sha, value in samples:
        if sha in seen:
            continue
        seen.add(sha)
        if value is None or value == "":
            nulls.append(sha)
            continue
        shas.append(sha)
        digests.append(value if isinstance(value, TlshDigest) else parse_digest(value))

    uf = UnionFind(len(digests))
    if digests:
        tree = build_vptree(digests, seed=seed, leaf_size=leaf_size)
        for i, j in zip(*radius_join(tree, cdist, exact=exact)):
            uf.union(int(i), int(j))

    groups = [[shas[i] for i in g] for g in uf.groups()]
    reasons = [UNIQUE_VALUE if len(g) == 1 else NO_REASON for g in groups]
    groups.extend([sha] for sha in nulls)
    reasons.extend([NULL_FEATURE] * len(nulls))
    return Clustering.from_groups(groups, reasons)


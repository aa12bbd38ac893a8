"""Clustering accuracy against family ground truth, and cluster-size summaries.

Precision and recall follow the usual malware-clustering definition over the
n samples present in both the clustering and the ground truth:

    precision = (1/n) * sum over clusters of the largest one-family count
    recall    = (1/n) * sum over families of the largest one-cluster count

Clustered samples missing from the ground truth are not scored.
"""
from __future__ import annotations

import json
import os
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping

import numpy as np

from .clustering.base import NULL_FEATURE, Clustering


class EmptyIntersection(ValueError):
    pass


def load_ground_truth(path: str | os.PathLike) -> dict[str, str]:
    truth: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1].strip():
                raise ValueError(f"{path}:{lineno}: expected sha256<TAB>family")
            sha, family = parts[0].strip().lower(), parts[1].strip()
            if truth.get(sha, family) != family:
                raise ValueError(f"{path}:{lineno}: {sha} has two families")
            truth[sha] = family
    return truth


@dataclass(frozen=True)
class AccuracyReport:
    clusters: int
    precision: float
    recall: float
    f1: float
    samples: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def table(self) -> str:
        return (
            f"{'Clust.':>8} {'Prec.':>8} {'Recall':>8} {'F1':>8} {'Scored':>8}\n"
            f"{self.clusters:>8} {self.precision:>8.1%} {self.recall:>8.1%} {self.f1:>8.1%} {self.samples:>8}"
        )


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def precision_recall_f1(clustering: Clustering, truth: Mapping[str, str]) -> AccuracyReport:
    per_cluster: list[Counter[str]] = []
    per_family: dict[str, Counter[int]] = defaultdict(Counter)
    n = 0
    for cid, members in enumerate(clustering.members):
        fams = Counter(truth[s] for s in members if s in truth)
        if not fams:
            continue
        per_cluster.append(fams)
        for fam, c in fams.items():
            per_family[fam][cid] += c
        n += sum(fams.values())
    if n == 0:
        raise EmptyIntersection("no clustered sample has a ground-truth family")
    precision = sum(max(c.values()) for c in per_cluster) / n
    recall = sum(max(c.values()) for c in per_family.values()) / n
    return AccuracyReport(len(per_cluster), precision, recall, f1_score(precision, recall), n)


@dataclass(frozen=True)
class SizeStats:
    clusters: int = 0
    non_null_clusters: int = 0
    singletons: int = 0
    non_null_singletons: int = 0
    max: int = 0
    mean: float = 0.0
    median: float = 0.0
    std: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def size_stats(null_singletons: int, non_null_sizes: Iterable[int]) -> SizeStats:
    """Summary from the null-feature singleton count and the other cluster sizes."""
    sizes = np.fromiter(non_null_sizes, dtype=np.int64)
    if sizes.size == 0:
        return SizeStats(clusters=null_singletons, singletons=null_singletons)
    non_null_singletons = int((sizes == 1).sum())
    return SizeStats(
        clusters=null_singletons + int(sizes.size),
        non_null_clusters=int(sizes.size),
        singletons=null_singletons + non_null_singletons,
        non_null_singletons=non_null_singletons,
        max=int(sizes.max()),
        mean=float(sizes.mean()),
        median=float(np.median(sizes)),
        std=float(sizes.std()),
    )


def cluster_size_stats(clustering: Clustering) -> SizeStats:
    nulls = 0
    sizes = []
    for members, reason in zip(clustering.members, clustering.reasons):
        if reason == NULL_FEATURE:
            nulls += 1
        else:
            sizes.append(len(members))
    return size_stats(nulls, sizes)

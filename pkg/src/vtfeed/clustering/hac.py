"""Single-linkage HAC over multi-feature sample distances.

The sample distance is the equal-weight mean of per-feature distances over
the features present in both samples: 0/1 equality for hashes and other
exact-match features, capped-and-scaled TLSH distance for ``tlsh``. A pair
sharing no present feature is at distance 1.

Cutting the single-linkage dendrogram at ``threshold`` is the same as taking
connected components of the graph whose edges have distance < threshold;
that is how clusters are computed here, with pairwise distances evaluated
one row at a time in numpy.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..report_model import SampleFeatures, feature_name
from ..tlsh_metric import NORMALIZATION_CAP, DigestArray, TlshDigest, normalized_distance, parse_digest
from .base import NO_REASON, NULL_FEATURE, UNIQUE_VALUE, Clustering, UnionFind

DEFAULT_THRESHOLD = 0.8
DEFAULT_MAX_SAMPLES = 50_000
TLSH = "tlsh"


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class DistanceSpec:
    features: tuple[str, ...]
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if not self.features:
            raise ValueError("DistanceSpec needs at least one feature")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold {self.threshold} outside [0, 1]")
        object.__setattr__(self, "features", tuple(feature_name(f) for f in self.features))
        if len(set(self.features)) != len(self.features):
            raise ValueError("duplicate feature in DistanceSpec")


def pairwise_distance(a: SampleFeatures, b: SampleFeatures, spec: DistanceSpec) -> float:
    total = 0.0
    count = 0
    for name in spec.features:
        va, vb = getattr(a, name), getattr(b, name)
        if va is None or vb is None:
            continue
        if name == TLSH:
            total += normalized_distance(parse_digest(va), parse_digest(vb))
        else:
            total += 0.0 if va == vb else 1.0
        count += 1
    return total / count if count else 1.0


class _Columns:
    """Per-feature encodings of a sample list for row-at-a-time scoring."""

    def __init__(self, samples: Sequence[SampleFeatures], spec: DistanceSpec):
        n = len(samples)
        self.cols: list[tuple[str, object, np.ndarray]] = []
        for name in spec.features:
            values = [getattr(s, name) for s in samples]
            present = np.array([v is not None for v in values], dtype=bool)
            if name == TLSH:
                placeholder: Optional[TlshDigest] = None
                parsed = []
                for v in values:
                    d = parse_digest(v) if v is not None else None
                    placeholder = placeholder or d
                    parsed.append(d)
                if placeholder is None:
                    continue
                self.cols.append((TLSH, (DigestArray([d or placeholder for d in parsed]), parsed), present))
            else:
                codes: dict[str, int] = {}
                arr = np.fromiter((codes.setdefault(v, len(codes)) if v is not None else -1 for v in values), dtype=np.int64, count=n)
                self.cols.append((name, arr, present))

    def row(self, i: int) -> np.ndarray:
        """Distances from sample ``i`` to samples ``i+1..n-1``."""
        total = None
        count = None
        for kind, data, present in self.cols:
            both = present[i + 1 :] & present[i]
            if kind == TLSH:
                arr, parsed = data
                if parsed[i] is None:
                    contrib = np.zeros(len(both))
                else:
                    raw = arr.distances(parsed[i], np.arange(i + 1, len(arr)))
                    contrib = np.minimum(raw, NORMALIZATION_CAP) / NORMALIZATION_CAP
            else:
                contrib = (data[i + 1 :] != data[i]).astype(np.float64)
            contrib = np.where(both, contrib, 0.0)
            total = contrib if total is None else total + contrib
            count = both.astype(np.int64) if count is None else count + both
        if total is None:
            return np.ones(0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(count > 0, total / np.maximum(count, 1), 1.0)


def hac_cluster(
    samples: Sequence[SampleFeatures], spec: DistanceSpec, max_samples: int = DEFAULT_MAX_SAMPLES
) -> Clustering:
    n = len(samples)
    if n > max_samples:
        raise TooLarge(
            f"{n} samples exceed the HAC limit of {max_samples}; "
            "HAC needs all pairwise distances, use HAC-T or FVG for large inputs"
        )
    shas = [s.sha256 for s in samples]
    if len(set(shas)) != n:
        raise ValueError("duplicate sha256 in HAC input; deduplicate first")
    uf = UnionFind(n)
    cols = _Columns(samples, spec)
    if cols.cols:
        for i in range(n - 1):
            d = cols.row(i)
            for j in np.flatnonzero(d < spec.threshold):
                uf.union(i, i + 1 + int(j))
    groups = uf.groups()
    reasons = []
    for g in groups:
        if len(g) > 1:
            reasons.append(NO_REASON)
        elif all(getattr(samples[g[0]], f) is None for f in spec.features):
            reasons.append(NULL_FEATURE)
        else:
            reasons.append(UNIQUE_VALUE)
    return Clustering.from_groups([[shas[i] for i in g] for g in groups], reasons)

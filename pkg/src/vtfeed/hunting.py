"""Threat hunting over clusters and per-sample scan histories."""
from __future__ import annotations

import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from .clustering.base import Clustering
from .report_model import Interval, SampleFeatures

FULLY_MALICIOUS = "fully-malicious"
FULLY_BENIGN = "fully-benign"
MIXED = "mixed"
MAJORITY = 0.5
DEFAULT_GRACE = 300
DEFAULT_FUD_THRESHOLD = 4


class MissingScore(KeyError):
    def __init__(self, hashes: Sequence[str]):
        super().__init__(f"{len(hashes)} clustered samples have no vt_score: {', '.join(hashes[:5])}")
        self.hashes = list(hashes)


class UnorderedHistory(ValueError):
    pass


def _class_of(detected: int, size: int) -> str:
    if detected == size:
        return FULLY_MALICIOUS
    if detected == 0:
        return FULLY_BENIGN
    return MIXED


@dataclass(frozen=True)
class ClusterVerdict:
    cluster_id: int
    size: int
    detected_low: int
    detected_high: int
    undetected: tuple[str, ...]

    @property
    def r1(self) -> float:
        return self.detected_low / self.size

    @property
    def r4(self) -> float:
        return self.detected_high / self.size

    @property
    def class_r1(self) -> str:
        return _class_of(self.detected_low, self.size)

    @property
    def class_r4(self) -> str:
        return _class_of(self.detected_high, self.size)

    @property
    def malicious_majority_r1(self) -> bool:
        return self.r1 >= MAJORITY

    @property
    def malicious_majority_r4(self) -> bool:
        return self.r4 >= MAJORITY

    @property
    def flagged(self) -> tuple[str, ...]:
        """Zero-detection members of a malicious-majority cluster."""
        return self.undetected if self.malicious_majority_r1 else ()

    def ratio(self, kind: str) -> float:
        if kind == "r1":
            return self.r1
        if kind == "r4":
            return self.r4
        raise ValueError(f"unknown ratio kind {kind!r}")


def classify_clusters(
    clustering: Clustering,
    scores: Mapping[str, int],
    low: int = 1,
    high: int = 4,
    include_singletons: bool = False,
) -> list[ClusterVerdict]:
    """Per-cluster detection ratios: r1 counts members with at least ``low``
    detections, r4 those with at least ``high``."""
    if not 0 <= low <= high:
        raise ValueError("need 0 <= low <= high")
    missing = sorted(sha for group in clustering.members for sha in group if sha not in scores)
    if missing:
        raise MissingScore(missing)
    out = []
    for cid, members in enumerate(clustering.members):
        if len(members) < 2 and not include_singletons:
            continue
        values = [scores[s] for s in members]
        out.append(
            ClusterVerdict(
                cluster_id=cid,
                size=len(members),
                detected_low=sum(v >= low for v in values),
                detected_high=sum(v >= high for v in values),
                undetected=tuple(sorted(s for s, v in zip(members, values) if v == 0)),
            )
        )
    return out


@dataclass(frozen=True)
class FlaggedSample:
    sha256: str
    cluster_id: int
    ratio: float


def flag_undetected(
    verdicts: Iterable[ClusterVerdict], min_ratio: float = MAJORITY, ratio_kind: str = "r1"
) -> list[FlaggedSample]:
    """Zero-detection members of every cluster whose ratio reaches ``min_ratio``."""
    if not 0.0 < min_ratio <= 1.0:
        raise ValueError("min_ratio must be in (0, 1]")
    out: dict[str, FlaggedSample] = {}
    for v in sorted(verdicts, key=lambda v: v.cluster_id):
        ratio = v.ratio(ratio_kind)
        if ratio < min_ratio:
            continue
        for sha in v.undetected:
            out.setdefault(sha, FlaggedSample(sha, v.cluster_id, ratio))
    return sorted(out.values(), key=lambda f: (f.cluster_id, f.sha256))


def summarize_verdicts(verdicts: Sequence[ClusterVerdict]) -> dict[str, dict[str, float]]:
    """Fraction of clusters per class, for both ratios."""
    n = len(verdicts)
    out: dict[str, dict[str, float]] = {}
    for kind in ("r1", "r4"):
        counts = defaultdict(int)
        for v in verdicts:
            counts[getattr(v, f"class_{kind}")] += 1
            counts["malicious-majority"] += getattr(v, f"malicious_majority_{kind}") and getattr(v, f"class_{kind}") == MIXED
        out[kind] = {k: (counts[k] / n if n else 0.0) for k in (FULLY_MALICIOUS, FULLY_BENIGN, MIXED, "malicious-majority")}
    return out


def write_verdicts(path: str | os.PathLike, verdicts: Iterable[ClusterVerdict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#cluster_id\tsize\tr1\tr4\tclass_r1\tclass_r4\tflagged\n")
        for v in verdicts:
            fh.write(f"{v.cluster_id}\t{v.size}\t{v.r1:.6f}\t{v.r4:.6f}\t{v.class_r1}\t{v.class_r4}\t{len(v.flagged)}\n")


def write_flagged(path: str | os.PathLike, flagged: Iterable[FlaggedSample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#sha256\tcluster_id\tratio\n")
        for f in flagged:
            fh.write(f"{f.sha256}\t{f.cluster_id}\t{f.ratio:.6f}\n")


# -- originally FUD --------------------------------------------------------


@dataclass(frozen=True)
class SampleHistory:
    fseen_date: int
    scans: tuple[tuple[int, int], ...]  # (scan_date, vt_score), oldest first


@dataclass(frozen=True)
class FudRecord:
    sha256: str
    fseen_date: int
    first_zero_scan: int
    flip_scan: int
    flip_delay: int


def histories_from_features(rows: Iterable[SampleFeatures]) -> dict[str, SampleHistory]:
    """Group report-level rows into per-sample histories, dropping repeated scans."""
    scans: dict[str, set[tuple[int, int]]] = defaultdict(set)
    fseen: dict[str, int] = {}
    for row in rows:
        scans[row.sha256].add((row.scan_date, row.vt_score))
        fseen[row.sha256] = min(fseen.get(row.sha256, row.fseen_date), row.fseen_date)
    return {sha: SampleHistory(fseen[sha], tuple(sorted(s))) for sha, s in scans.items()}


def _in_any(t: int, intervals: Sequence[Interval]) -> bool:
    return any(t in iv for iv in intervals)


def detect_originally_fud(
    histories: Mapping[str, SampleHistory],
    window: Interval,
    gaps: Sequence[Interval] = (),
    threshold: int = DEFAULT_FUD_THRESHOLD,
    grace: int = DEFAULT_GRACE,
) -> list[FudRecord]:
    """Samples first seen in ``window`` whose first scan had no detections and
    whose last scan has at least ``threshold``.

    A first scan with no detections is either observed directly, or inferred
    when the first-seen date lies outside every collection gap and before the
    earliest collected scan. Samples that flip within ``grace`` seconds of
    first sight are dropped.
    """
    out = []
    for sha in sorted(histories):
        h = histories[sha]
        if not h.scans:
            continue
        dates = [d for d, _ in h.scans]
        if any(b < a for a, b in zip(dates, dates[1:])):
            raise UnorderedHistory(f"{sha}: scans not in scan_date order")
        if h.fseen_date not in window or h.scans[-1][1] < threshold:
            continue
        first_date, first_score = h.scans[0]
        observed_zero = first_score == 0
        inferred_zero = not _in_any(h.fseen_date, gaps) and h.fseen_date < first_date
        if not (observed_zero or inferred_zero):
            continue
        flip: Optional[int] = next(d for d, s in h.scans if s >= threshold)
        if flip - h.fseen_date <= grace:
            continue
        out.append(
            FudRecord(
                sha256=sha,
                fseen_date=h.fseen_date,
                first_zero_scan=first_date if observed_zero else h.fseen_date,
                flip_scan=flip,
                flip_delay=flip - h.fseen_date,
            )
        )
    return out


def write_fud(path: str | os.PathLike, records: Iterable[FudRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#sha256\tfseen_date\tfirst_zero_scan\tflip_scan\tflip_delay\n")
        for r in records:
            fh.write(f"{r.sha256}\t{r.fseen_date}\t{r.first_zero_scan}\t{r.flip_scan}\t{r.flip_delay}\n")

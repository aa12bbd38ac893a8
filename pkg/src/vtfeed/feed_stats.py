"""Feed characterization: daily volume, detections, filetypes, families, delays."""
from __future__ import annotations

import csv
import io
import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .evaluation import EmptyIntersection
from .report_model import Interval, SampleFeatures

DAY = 86400
LONG_DELAY = 90 * DAY
PREVALENCE_BUCKETS = (1, 10, 100, 1000)
NULL_LABEL = "NULL"


def utc_day(ts: int) -> int:
    """Epoch seconds of the UTC midnight starting the day that holds ``ts``."""
    return ts - ts % DAY


@dataclass(frozen=True)
class SeriesSummary:
    mean: float = 0.0
    median: float = 0.0
    std: float = 0.0
    max: int = 0

    @classmethod
    def of(cls, values: Sequence[int]) -> "SeriesSummary":
        if not len(values):
            return cls()
        a = np.asarray(values, dtype=np.float64)
        return cls(float(a.mean()), float(np.median(a)), float(a.std()), int(a.max()))


@dataclass(frozen=True)
class DayCounts:
    day: int
    reports: int
    samples: int
    new_samples: int


@dataclass(frozen=True)
class DailyStats:
    days: tuple[DayCounts, ...]
    reports: SeriesSummary
    samples: SeriesSummary
    new_samples: SeriesSummary

    def to_dict(self) -> dict:
        return asdict(self)

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["day", "reports", "samples", "new_samples"])
        for d in self.days:
            w.writerow([d.day, d.reports, d.samples, d.new_samples])
        return buf.getvalue()


class DailyAccumulator:
    """Mergeable per-day state; feed rows in any order, then call ``result``."""

    def __init__(self, window: Interval, gaps: Sequence[Interval] = ()):
        self.window = window
        self.gaps = list(gaps)
        self.reports: Counter[int] = Counter()
        self.samples: dict[int, set[str]] = defaultdict(set)
        self.new: dict[int, set[str]] = defaultdict(set)

    def add(self, row: SampleFeatures) -> None:
        if row.scan_date not in self.window:
            return
        day = utc_day(row.scan_date)
        self.reports[day] += 1
        self.samples[day].add(row.sha256)
        if row.fseen_date in self.window and utc_day(row.fseen_date) == day:
            self.new[day].add(row.sha256)

    def merge(self, other: "DailyAccumulator") -> "DailyAccumulator":
        self.reports.update(other.reports)
        for src, dst in ((other.samples, self.samples), (other.new, self.new)):
            for day, shas in src.items():
                dst[day] |= shas
        return self

    def _is_gap_day(self, day: int) -> bool:
        return any(g.start < day + DAY and g.end > day for g in self.gaps)

    def result(self) -> DailyStats:
        days = tuple(
            DayCounts(d, self.reports[d], len(self.samples[d]), len(self.new.get(d, ())))
            for d in sorted(self.reports)
            if not self._is_gap_day(d)
        )
        return DailyStats(
            days,
            SeriesSummary.of([d.reports for d in days]),
            SeriesSummary.of([d.samples for d in days]),
            SeriesSummary.of([d.new_samples for d in days]),
        )


def daily_volume(rows: Iterable[SampleFeatures], window: Interval, gaps: Sequence[Interval] = ()) -> DailyStats:
    """Per-UTC-day report, distinct-sample and new-sample counts.

    Reports scanned outside ``window`` are skipped; days overlapping a gap are
    left out of the series. A sample is new only on the day of its first-seen
    date.
    """
    acc = DailyAccumulator(window, gaps)
    for row in rows:
        acc.add(row)
    return acc.result()


@dataclass(frozen=True)
class DetectionHistogram:
    counts: dict[int, int]
    total: int
    recdf: dict[int, float]
    at_least_1: float
    at_least_4: float

    def to_dict(self) -> dict:
        return {
            "counts": {str(k): v for k, v in self.counts.items()},
            "total": self.total,
            "recdf": {str(k): v for k, v in self.recdf.items()},
            "at_least_1": self.at_least_1,
            "at_least_4": self.at_least_4,
        }

    def csv(self) -> str:
        lines = ["vt_score,count,recdf"]
        lines += [f"{s},{self.counts.get(s, 0)},{self.recdf[s]!r}" for s in sorted(self.recdf)]
        return "\n".join(lines) + "\n"


def detection_distribution(scores: Iterable[int], low: int = 1, high: int = 4) -> DetectionHistogram:
    """Histogram of vt_score plus the reverse ECDF, s -> fraction with score >= s."""
    counts = Counter(int(s) for s in scores)
    total = sum(counts.values())
    top = max(counts, default=0)
    recdf: dict[int, float] = {}
    remaining = total
    for s in range(top + 2):
        recdf[s] = remaining / total if total else 0.0
        remaining -= counts.get(s, 0)

    def frac(t: int) -> float:
        return sum(c for s, c in counts.items() if s >= t) / total if total else 0.0

    return DetectionHistogram(dict(sorted(counts.items())), total, recdf, frac(low), frac(high))


@dataclass(frozen=True)
class RankedCount:
    value: str
    count: int
    percent: float


def filetype_distribution(filetypes: Iterable[Optional[str]]) -> list[RankedCount]:
    """Counts per canonical filetype, NULL included, ranked by count then name."""
    counts = Counter(ft if ft else NULL_LABEL for ft in filetypes)
    total = sum(counts.values())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [RankedCount(v, c, 100.0 * c / total) for v, c in ranked]


@dataclass(frozen=True)
class FamilyPrevalence:
    families: int
    buckets: dict[int, int]
    top_by_filetype: dict[str, list[RankedCount]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "families": self.families,
            "buckets": {f">={k}": v for k, v in self.buckets.items()},
            "top_by_filetype": {ft: [asdict(r) for r in rows] for ft, rows in self.top_by_filetype.items()},
        }


def family_prevalence(
    labels: Mapping[str, Optional[str]],
    filetypes: Optional[Mapping[str, Optional[str]]] = None,
    top_k: int = 10,
) -> FamilyPrevalence:
    """Family sizes bucketed at 1/10/100/1000 members, with an optional
    top-k family table per filetype. Unlabeled samples are ignored."""
    sizes = Counter(fam for fam in labels.values() if fam)
    buckets = {b: sum(1 for c in sizes.values() if c >= b) for b in PREVALENCE_BUCKETS}
    top: dict[str, list[RankedCount]] = {}
    if filetypes is not None:
        by_ft: dict[str, Counter[str]] = defaultdict(Counter)
        for sha, fam in labels.items():
            if fam:
                by_ft[filetypes.get(sha) or NULL_LABEL][fam] += 1
        for ft in sorted(by_ft):
            c = by_ft[ft]
            total = sum(c.values())
            ranked = sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
            top[ft] = [RankedCount(f, n, 100.0 * n / total) for f, n in ranked]
    return FamilyPrevalence(len(sizes), buckets, top)


@dataclass(frozen=True)
class DelaySummary:
    samples: int
    median: float
    mean: float
    positive: float
    negative: float
    zero: float
    long_delay: float

    def to_dict(self) -> dict:
        return asdict(self)


def telemetry_delay(
    vt_fseen: Mapping[str, int], other_fseen: Mapping[str, int]
) -> tuple[dict[str, int], DelaySummary]:
    """Per shared hash, VT first-seen minus the other source's first-seen.

    Positive delays mean the other source saw the sample first.
    """
    shared = sorted(vt_fseen.keys() & other_fseen.keys())
    if not shared:
        raise EmptyIntersection("no sample appears in both first-seen maps")
    delays = {sha: vt_fseen[sha] - other_fseen[sha] for sha in shared}
    a = np.fromiter(delays.values(), dtype=np.int64, count=len(delays))
    n = len(a)
    summary = DelaySummary(
        samples=n,
        median=float(np.median(a)),
        mean=float(a.mean()),
        positive=int((a > 0).sum()) / n,
        negative=int((a < 0).sum()) / n,
        zero=int((a == 0).sum()) / n,
        long_delay=int((np.abs(a) > LONG_DELAY).sum()) / n,
    )
    return delays, summary


def to_json(doc: Mapping) -> str:
    return json.dumps(doc, sort_keys=True, indent=2)


def format_table(rows: Sequence[RankedCount], header: str = "value") -> str:
    width = max([len(header)] + [len(r.value) for r in rows])
    out = [f"{header:<{width}} {'count':>10} {'percent':>8}"]
    out += [f"{r.value:<{width}} {r.count:>10} {r.percent:>7.2f}%" for r in rows]
    return "\n".join(out)

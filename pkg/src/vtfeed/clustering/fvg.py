"""Feature value grouping.

Rows are sorted on (feature value, sha256, scan_date) and every run of equal
values becomes one cluster. Rows with a NULL value become null-feature
singletons. Cluster ids follow the sorted order, NULL singletons first.

The input is expected to hold one value per sha256 (sample-scope features,
e.g. a deduplicated feature file); repeated rows of a sample are collapsed.
"""
from __future__ import annotations

import logging
import os
import tempfile
import time
from array import array
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from ..extsort import DEFAULT_BUDGET, SortStats, default_tmp_dir, sort_lines
from ..report_model import FEATURE_COLUMNS, MalformedRow, check_header, feature_name, open_text
from .base import NO_REASON, NULL_FEATURE, UNIQUE_VALUE, Clustering

log = logging.getLogger(__name__)

_DATE_WIDTH = 12


def _group_sorted(pairs: Iterable[tuple[str, str]]) -> Iterator[tuple[list[str], str]]:
    """Group (value, sha256) pairs sorted by value then sha256; "" is NULL."""
    cur = None
    members: list[str] = []
    for value, sha in pairs:
        if members and value == cur:
            if sha == members[-1]:
                continue
            if value == "":
                yield members, NULL_FEATURE
                members = [sha]
            else:
                members.append(sha)
            continue
        if members:
            yield members, _reason(cur, members)
        cur, members = value, [sha]
    if members:
        yield members, _reason(cur, members)


def _reason(value: str, members: list[str]) -> str:
    if value == "":
        return NULL_FEATURE
    return UNIQUE_VALUE if len(members) == 1 else NO_REASON


def fvg_cluster(rows: Iterable[tuple[Optional[str], str, int]]) -> Clustering:
    """Cluster (feature_value, sha256, scan_date) rows in memory."""
    keyed = sorted((value or "", sha, scan_date) for value, sha, scan_date in rows)
    clustering = Clustering()
    for members, reason in _group_sorted((v, s) for v, s, _ in keyed):
        clustering.members.append(tuple(members))
        clustering.reasons.append(reason)
    return clustering


@dataclass
class FvgRun:
    """Outcome of a file-to-file FVG run."""

    feature: str
    rows: int = 0
    clusters: int = 0
    null_singletons: int = 0
    unique_singletons: int = 0
    sort: SortStats = field(default_factory=SortStats)
    group_seconds: float = 0.0
    # sizes of clusters other than null-feature singletons
    sizes: array = field(default_factory=lambda: array("I"))


def _projected(path: str | os.PathLike, column: int) -> Iterator[str]:
    ncols = len(FEATURE_COLUMNS)
    with open_text(path) as fh:
        first = fh.readline()
        if first:
            check_header(first)
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != ncols:
                if not line.strip():
                    continue
                raise MalformedRow(f"{path}:{lineno}: expected {ncols} columns, got {len(parts)}")
            yield f"{parts[column]}\t{parts[0]}\t{parts[1].zfill(_DATE_WIDTH)}\n"


def fvg_cluster_file(
    features_path: str | os.PathLike,
    out_path: str | os.PathLike,
    feature: str,
    budget: int = DEFAULT_BUDGET,
    tmp_dir: Optional[str] = None,
) -> FvgRun:
    """Cluster a feature file on one feature, writing the cluster file.

    Sorting goes through the external sort, so memory stays near ``budget``
    whatever the input size.
    """
    name = feature_name(feature)
    column = FEATURE_COLUMNS.index(name)
    run = FvgRun(feature=name)
    tmp = default_tmp_dir(tmp_dir)
    fd, sorted_path = tempfile.mkstemp(prefix="vtfeed-fvg-", suffix=".sorted", dir=tmp)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as sorted_fh:
            sort_lines(_projected(features_path, column), sorted_fh, budget=budget, tmp_dir=tmp, stats=run.sort)
        run.rows = run.sort.rows
        start = time.perf_counter()
        with open(sorted_path, encoding="utf-8") as src, open(out_path, "w", encoding="utf-8") as out:
            pairs = (line.split("\t", 2)[:2] for line in src)
            cid = 0
            for members, reason in _group_sorted(pairs):
                if reason == NULL_FEATURE:
                    run.null_singletons += 1
                else:
                    run.sizes.append(len(members))
                    if reason == UNIQUE_VALUE:
                        run.unique_singletons += 1
                out.writelines(f"{cid}\t{sha}\t{reason}\n" for sha in members)
                cid += 1
            run.clusters = cid
        run.group_seconds = time.perf_counter() - start
    except BaseException:
        try:
            os.remove(out_path)
        except FileNotFoundError:
            pass
        raise
    finally:
        os.remove(sorted_path)
    log.info(
        "fvg %s: %d rows, %d clusters, sort %.1fs, group %.1fs",
        name, run.rows, run.clusters, run.sort.seconds, run.group_seconds,
    )
    return run

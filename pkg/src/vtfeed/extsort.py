"""Chunked external merge sort for line-oriented tab-separated files.

Lines are buffered until the estimated in-memory footprint reaches the
budget, sorted, spilled to temporary files and k-way merged. The sort is
stable: ties keep input order.
"""
from __future__ import annotations

import errno
import heapq
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional, Sequence, TextIO

from .report_model import FEATURE_FILE_MAGIC, MalformedRow, open_text

log = logging.getLogger(__name__)

MiB = 1 << 20
DEFAULT_BUDGET = 256 * MiB
MAX_FANIN = 64
TMPDIR_ENV = "VTFEED_TMPDIR"
# share of the budget given to the chunk buffer; the rest covers sort scratch and I/O
_CHUNK_SHARE = 0.6
_LIST_SLOT = 8


class SortSpill(OSError):
    """Temporary storage ran out while spilling sorted chunks."""


@dataclass
class SortStats:
    rows: int = 0
    chunks: int = 0
    merge_passes: int = 0
    seconds: float = 0.0


def default_tmp_dir(tmp_dir: Optional[str] = None) -> Optional[str]:
    return tmp_dir or os.environ.get(TMPDIR_ENV) or None


def column_key(columns: Sequence[int]) -> Callable[[str], tuple[str, ...]]:
    cols = tuple(columns)
    need = max(cols) + 1

    def key(line: str) -> tuple[str, ...]:
        parts = line.rstrip("\n").split("\t", need)
        if len(parts) < need:
            raise MalformedRow(f"row has {len(parts)} columns, key needs {need}: {line[:80]!r}")
        return tuple(parts[c] for c in cols)

    return key


class _Spiller:
    def __init__(self, tmp_dir: Optional[str]):
        self.tmp_dir = default_tmp_dir(tmp_dir)
        self.paths: list[str] = []

    def write(self, lines: Iterable[str]) -> str:
        fd, path = tempfile.mkstemp(prefix="vtfeed-sort-", suffix=".chunk", dir=self.tmp_dir)
        self.paths.append(path)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.writelines(lines)
        except OSError as exc:
            if exc.errno in (errno.ENOSPC, errno.EDQUOT):
                raise SortSpill(exc.errno, f"temporary storage exhausted in {self.tmp_dir or tempfile.gettempdir()}") from exc
            raise
        return path

    def cleanup(self) -> None:
        for path in self.paths:
            try:
                os.remove(path)
            except FileNotFoundError:
                pass
        self.paths.clear()


def _merge(paths: list[str], key, out: TextIO) -> None:
    files = [open(p, encoding="utf-8", newline="") for p in paths]
    try:
        out.writelines(heapq.merge(*files, key=key))
    finally:
        for fh in files:
            fh.close()


def sort_lines(
    lines: Iterable[str],
    out: TextIO,
    key: Optional[Callable[[str], object]] = None,
    budget: int = DEFAULT_BUDGET,
    tmp_dir: Optional[str] = None,
    stats: Optional[SortStats] = None,
) -> SortStats:
    """Write ``lines`` to ``out`` in sorted order using at most ~``budget`` bytes."""
    stats = stats if stats is not None else SortStats()
    start = time.perf_counter()
    limit = max(int(budget * _CHUNK_SHARE), 1)
    spiller = _Spiller(tmp_dir)
    chunk: list[str] = []
    used = 0
    sizeof = sys.getsizeof
    key_extra = 2 if key is not None else 1
    try:
        for line in lines:
            if not line.endswith("\n"):
                line += "\n"
            chunk.append(line)
            used += sizeof(line) * key_extra + _LIST_SLOT
            stats.rows += 1
            if used >= limit:
                chunk.sort(key=key)
                spiller.write(chunk)
                stats.chunks += 1
                chunk = []
                used = 0
        chunk.sort(key=key)
        if not spiller.paths:
            out.writelines(chunk)
            stats.chunks += 1 if chunk else 0
        else:
            spiller.write(chunk)
            stats.chunks += 1
            chunk = []
            paths = list(spiller.paths)
            while len(paths) > MAX_FANIN:
                stats.merge_passes += 1
                merged = []
                for i in range(0, len(paths), MAX_FANIN):
                    group = paths[i : i + MAX_FANIN]
                    fd, path = tempfile.mkstemp(prefix="vtfeed-merge-", suffix=".chunk", dir=spiller.tmp_dir)
                    spiller.paths.append(path)
                    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                        _merge(group, key, fh)
                    for p in group:
                        os.remove(p)
                    merged.append(path)
                paths = merged
            stats.merge_passes += 1
            _merge(paths, key, out)
    except OSError as exc:
        if exc.errno in (errno.ENOSPC, errno.EDQUOT) and not isinstance(exc, SortSpill):
            raise SortSpill(exc.errno, "temporary storage exhausted") from exc
        raise
    finally:
        spiller.cleanup()
    stats.seconds += time.perf_counter() - start
    return stats


def external_sort(
    in_path: str | os.PathLike,
    out_path: str | os.PathLike,
    key_columns: Optional[Sequence[int]] = None,
    budget: int = DEFAULT_BUDGET,
    tmp_dir: Optional[str] = None,
) -> SortStats:
    """Sort a tab-separated file on ``key_columns`` (whole line when None).

    A leading ``#ffv1`` header line is kept in place and every row must have
    the header's column count. The output is removed if the sort fails.
    """
    key = column_key(key_columns) if key_columns is not None else None
    try:
        with open_text(in_path) as src, open_text(out_path, "w") as dst:
            first = src.readline()
            if first.startswith(FEATURE_FILE_MAGIC):
                dst.write(first if first.endswith("\n") else first + "\n")
                tabs = first.rstrip("\n").count("\t")
                # the header lists the magic plus one name per column
                rows: Iterator[str] = _checked(src, tabs - 1) if tabs else iter(src)
            else:
                rows = _chain_first(first, src)
            return sort_lines(rows, dst, key=key, budget=budget, tmp_dir=tmp_dir)
    except BaseException:
        try:
            os.remove(out_path)
        except FileNotFoundError:
            pass
        raise


def _chain_first(first: str, rest: Iterable[str]) -> Iterator[str]:
    if first:
        yield first
    yield from rest


def _checked(lines: Iterable[str], tabs: int) -> Iterator[str]:
    for lineno, line in enumerate(lines, 2):
        if line.count("\t") != tabs:
            raise MalformedRow(f"line {lineno}: expected {tabs + 1} columns")
        yield line

"""Scan-report parsing, filetype derivation, per-sample features and dedup.

Reports arrive as JSON Lines (see ``docs/report-format.md``). A sample
(unique sha256) may have many reports; the per-sample views keep either the
latest report or, for samples first seen inside the analysis window, the
first one.
"""
from __future__ import annotations

import gzip
import io
import json
import logging
import os
import re
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator, Optional, Sequence

from .tlsh_metric import InvalidDigest, parse_digest

if TYPE_CHECKING:
    from .labeler import LabelResult

log = logging.getLogger(__name__)

MAX_VT_SCORE = 200


class MalformedRecord(ValueError):
    pass


class MalformedRow(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    """Half-open UTC interval ``[start, end)`` in epoch seconds."""

    start: int
    end: int

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"empty interval [{self.start}, {self.end})")

    def __contains__(self, t: int) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class ReportRecord:
    sha256: str
    scan_date: int
    fseen_date: int
    vt_score: int
    detection_labels: tuple[tuple[str, Optional[str]], ...] = ()
    sha1: Optional[str] = None
    md5: Optional[str] = None
    trid_file_type: Optional[str] = None
    vt_tags: tuple[str, ...] = ()
    vt_meaningful_name: Optional[str] = None
    tlsh: Optional[str] = None
    vhash: Optional[str] = None
    imphash: Optional[str] = None
    richpe_hash: Optional[str] = None
    authentihash: Optional[str] = None
    icon_hash: Optional[str] = None
    cert_thumbprint: Optional[str] = None
    cert_subject: Optional[str] = None
    cert_issuer: Optional[str] = None
    cert_valid_from: Optional[int] = None
    cert_valid_to: Optional[int] = None
    sig_verification_res: Optional[str] = None
    package_name: Optional[str] = None


# hash field -> exact hex length (None: any non-empty even-free hex)
_HEX_FIELDS = {
    "sha1": 40,
    "md5": 32,
    "imphash": 32,
    "authentihash": 64,
    "richpe_hash": None,
    "icon_hash": None,
    "cert_thumbprint": None,
}
_TEXT_FIELDS = (
    "trid_file_type",
    "vt_meaningful_name",
    "vhash",
    "cert_subject",
    "cert_issuer",
    "sig_verification_res",
    "package_name",
)
_HEX_RE = re.compile(r"[0-9a-f]+")
_SHA256_RE = re.compile(r"[0-9a-f]{64}")


def _text(value, name: str) -> Optional[str]:
    if value is None:
        return None
    if not isinstance(value, str):
        raise MalformedRecord(f"{name}: expected text, got {type(value).__name__}")
    value = value.strip()
    return value or None


def _hex(value, name: str, length: Optional[int]) -> Optional[str]:
    value = _text(value, name)
    if value is None:
        return None
    value = value.lower()
    if not _HEX_RE.fullmatch(value) or (length is not None and len(value) != length):
        raise MalformedRecord(f"{name}: bad hex {value!r}")
    return value


def _epoch(value, name: str, required: bool = False) -> Optional[int]:
    if value is None:
        if required:
            raise MalformedRecord(f"{name}: missing")
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedRecord(f"{name}: expected epoch seconds, got {value!r}")
    if isinstance(value, float) and not value.is_integer():
        raise MalformedRecord(f"{name}: fractional epoch {value!r}")
    return int(value)


def _labels(value) -> tuple[tuple[str, Optional[str]], ...]:
    if value is None:
        return ()
    if isinstance(value, dict):
        items = value.items()
    elif isinstance(value, list):
        items = []
        for entry in value:
            if isinstance(entry, dict):
                items.append((entry.get("engine"), entry.get("label")))
            elif isinstance(entry, (list, tuple)) and len(entry) == 2:
                items.append(tuple(entry))
            else:
                raise MalformedRecord(f"detection_labels: bad entry {entry!r}")
    else:
        raise MalformedRecord("detection_labels: expected object or list")
    out = []
    for engine, label in items:
        if not isinstance(engine, str) or not engine:
            raise MalformedRecord(f"detection_labels: bad engine {engine!r}")
        if label is not None and not isinstance(label, str):
            raise MalformedRecord(f"detection_labels: bad label {label!r}")
        out.append((engine, label if label else None))
    return tuple(out)


def parse_report_line(line: str) -> ReportRecord:
    """Parse one JSON report line. Unknown keys are ignored."""
    try:
        obj = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedRecord(f"not JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedRecord("record is not a JSON object")

    sha256 = obj.get("sha256")
    if not isinstance(sha256, str) or not _SHA256_RE.fullmatch(sha256.strip().lower()):
        raise MalformedRecord(f"sha256: bad value {sha256!r}")
    sha256 = sha256.strip().lower()

    scan_date = _epoch(obj.get("scan_date"), "scan_date", required=True)
    fseen_date = _epoch(obj.get("fseen_date"), "fseen_date", required=True)
    if fseen_date > scan_date:
        raise MalformedRecord(f"fseen_date {fseen_date} after scan_date {scan_date}")

    labels = _labels(obj.get("detection_labels"))
    vt_score = obj.get("vt_score")
    if vt_score is None:
        vt_score = sum(1 for _, label in labels if label is not None)
    if isinstance(vt_score, bool) or not isinstance(vt_score, int) or not 0 <= vt_score <= MAX_VT_SCORE:
        raise MalformedRecord(f"vt_score: bad value {vt_score!r}")

    tags = obj.get("vt_tags") or []
    if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
        raise MalformedRecord("vt_tags: expected list of text")

    tlsh = _text(obj.get("tlsh"), "tlsh")
    if tlsh is not None:
        if tlsh.upper() == "TNULL":
            tlsh = None
        else:
            try:
                parse_digest(tlsh)
            except InvalidDigest as exc:
                raise MalformedRecord(f"tlsh: {exc}") from None

    kwargs = {name: _hex(obj.get(name), name, length) for name, length in _HEX_FIELDS.items()}
    kwargs.update({name: _text(obj.get(name), name) for name in _TEXT_FIELDS})
    return ReportRecord(
        sha256=sha256,
        scan_date=scan_date,
        fseen_date=fseen_date,
        vt_score=vt_score,
        detection_labels=labels,
        vt_tags=tuple(t.strip().lower() for t in tags if t.strip()),
        tlsh=tlsh,
        cert_valid_from=_epoch(obj.get("cert_valid_from"), "cert_valid_from"),
        cert_valid_to=_epoch(obj.get("cert_valid_to"), "cert_valid_to"),
        **kwargs,
    )


def open_text(path: str | os.PathLike, mode: str = "r"):
    """Open a UTF-8 text file, transparently (de)compressing ``.gz``."""
    path = str(path)
    if path.endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, mode.replace("t", "") + "b"), encoding="utf-8")
    return open(path, mode, encoding="utf-8")


@dataclass
class ParseStats:
    lines: int = 0
    records: int = 0
    errors: int = 0
    error_lines: list[int] = field(default_factory=list)


def iter_reports(
    lines: Iterable[str], stats: Optional[ParseStats] = None, keep_error_lines: bool = False
) -> Iterator[ReportRecord]:
    """Yield parsed records, counting and skipping malformed lines."""
    stats = stats if stats is not None else ParseStats()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        stats.lines += 1
        try:
            rec = parse_report_line(line)
        except MalformedRecord as exc:
            stats.errors += 1
            if keep_error_lines:
                stats.error_lines.append(lineno)
            log.debug("line %d skipped: %s", lineno, exc)
            continue
        stats.records += 1
        yield rec


def read_reports(paths: Sequence[str | os.PathLike], stats: Optional[ParseStats] = None) -> Iterator[ReportRecord]:
    for path in paths:
        with open_text(path) as fh:
            yield from iter_reports(fh, stats)


# -- filetype --------------------------------------------------------------


@dataclass
class FiletypeMapping:
    trid: list[tuple[str, str]] = field(default_factory=list)
    tags: dict[str, tuple[int, str]] = field(default_factory=dict)
    extensions: dict[str, str] = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str) -> "FiletypeMapping":
        mapping = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split("\t")]
            if len(parts) != 3 or not all(parts):
                raise ValueError(f"filetype mapping line {lineno}: expected kind<TAB>pattern<TAB>filetype")
            kind, pattern, canonical = parts
            if kind == "trid":
                mapping.trid.append((pattern.lower(), canonical))
            elif kind == "tag":
                mapping.tags.setdefault(pattern.lower(), (len(mapping.tags), canonical))
            elif kind == "ext":
                mapping.extensions[pattern.lower().lstrip(".")] = canonical
            else:
                raise ValueError(f"filetype mapping line {lineno}: unknown kind {kind!r}")
        return mapping

    @classmethod
    def load(cls, path: str | os.PathLike | None = None) -> "FiletypeMapping":
        if path is None:
            text = resources.files("vtfeed.data").joinpath("filetypes.tsv").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls.parse(text)

    def from_trid(self, trid: Optional[str]) -> Optional[str]:
        if not trid:
            return None
        needle = trid.lower()
        for pattern, canonical in self.trid:
            if pattern in needle:
                return canonical
        return None

    def from_tags(self, tags: Iterable[str]) -> Optional[str]:
        hits = [self.tags[t.lower()] for t in tags if t.lower() in self.tags]
        return min(hits)[1] if hits else None

    def from_name(self, name: Optional[str]) -> Optional[str]:
        if not name:
            return None
        base = name.replace("\\", "/").rsplit("/", 1)[-1]
        if "." not in base.strip("."):
            return None
        return self.extensions.get(base.rsplit(".", 1)[1].lower())


def derive_filetype(
    trid: Optional[str], tags: Iterable[str], name: Optional[str], mapping: FiletypeMapping
) -> Optional[str]:
    """Majority vote over trid, tags and filename extension.

    Without a two-vote majority the highest-priority vote wins
    (trid, then tags, then name).
    """
    votes = [v for v in (mapping.from_trid(trid), mapping.from_tags(tags), mapping.from_name(name)) if v]
    for v in votes:
        if votes.count(v) >= 2:
            return v
    return votes[0] if votes else None


# -- per-sample features ---------------------------------------------------

CLUSTER_FEATURES = (
    "tlsh",
    "vhash",
    "imphash",
    "richpe_hash",
    "authentihash",
    "icon_hash",
    "cert_thumbprint",
    "package_name",
)
_LOWER_HEX = {"tlsh", "imphash", "richpe_hash", "authentihash", "icon_hash", "cert_thumbprint"}
_FEATURE_ALIASES = {"avc2_family": "family", "pkg_name": "package_name", "cert_thumb": "cert_thumbprint"}


def feature_name(name: str) -> str:
    """Canonical SampleFeatures attribute for a clustering feature name."""
    name = _FEATURE_ALIASES.get(name, name)
    if name not in CLUSTER_FEATURES and name != "family":
        raise ValueError(f"unknown clustering feature {name!r}")
    return name


@dataclass(frozen=True)
class SampleFeatures:
    sha256: str
    scan_date: int
    fseen_date: int
    vt_score: int
    filetype: Optional[str] = None
    family: Optional[str] = None
    is_pup: Optional[bool] = None
    tlsh: Optional[str] = None
    vhash: Optional[str] = None
    imphash: Optional[str] = None
    richpe_hash: Optional[str] = None
    authentihash: Optional[str] = None
    icon_hash: Optional[str] = None
    cert_thumbprint: Optional[str] = None
    package_name: Optional[str] = None
    is_new: bool = False

    def richness(self) -> int:
        return sum(getattr(self, name) is not None for name in _OPTIONAL_COLUMNS)


_CLEAN_RE = re.compile(r"[\t\r\n]+")


def _clean(value: Optional[str], lower: bool = False) -> Optional[str]:
    if value is None:
        return None
    value = _CLEAN_RE.sub(" ", value).strip()
    if lower:
        value = value.lower()
    return value or None


def extract_features(
    report: ReportRecord,
    label_result: Optional["LabelResult"],
    window: Interval,
    mapping: Optional[FiletypeMapping] = None,
) -> SampleFeatures:
    mapping = mapping if mapping is not None else _default_mapping()
    values = {name: _clean(getattr(report, name), lower=name in _LOWER_HEX) for name in CLUSTER_FEATURES}
    return SampleFeatures(
        sha256=report.sha256,
        scan_date=report.scan_date,
        fseen_date=report.fseen_date,
        vt_score=report.vt_score,
        filetype=derive_filetype(report.trid_file_type, report.vt_tags, report.vt_meaningful_name, mapping),
        family=_clean(label_result.family) if label_result is not None else None,
        is_pup=label_result.is_pup if label_result is not None else None,
        is_new=report.fseen_date in window,
        **values,
    )


_MAPPING_CACHE: list[FiletypeMapping] = []


def _default_mapping() -> FiletypeMapping:
    if not _MAPPING_CACHE:
        _MAPPING_CACHE.append(FiletypeMapping.load())
    return _MAPPING_CACHE[0]


def _better(new: SampleFeatures, old: SampleFeatures, latest: bool) -> bool:
    if new.scan_date != old.scan_date:
        return new.scan_date > old.scan_date if latest else new.scan_date < old.scan_date
    # equal scan_date: richer row wins, earlier input wins a full tie
    return new.richness() > old.richness()


def _reduce(rows: Iterable[SampleFeatures], latest: bool, only_new: bool) -> list[SampleFeatures]:
    best: dict[str, SampleFeatures] = {}
    for row in rows:
        if only_new and not row.is_new:
            continue
        old = best.get(row.sha256)
        if old is None or _better(row, old, latest):
            best[row.sha256] = row
    return [best[k] for k in sorted(best)]


def dedup_latest(rows: Iterable[SampleFeatures]) -> list[SampleFeatures]:
    """One row per sha256: the latest scan. Output sorted by sha256."""
    return _reduce(rows, latest=True, only_new=False)


def first_reports(rows: Iterable[SampleFeatures]) -> list[SampleFeatures]:
    """One row per new sample: its earliest scan. Non-new samples are dropped."""
    return _reduce(rows, latest=False, only_new=True)


# -- feature file (ffv1) ---------------------------------------------------

FEATURE_FILE_MAGIC = "#ffv1"
FEATURE_COLUMNS = tuple(f.name for f in fields(SampleFeatures))
_OPTIONAL_COLUMNS = FEATURE_COLUMNS[4:-1]
_INT_COLUMNS = {"scan_date", "fseen_date", "vt_score"}
_BOOL_COLUMNS = {"is_pup", "is_new"}
FEATURE_HEADER = "\t".join((FEATURE_FILE_MAGIC,) + FEATURE_COLUMNS) + "\n"


def column_index(name: str) -> int:
    return FEATURE_COLUMNS.index(name)


def format_features(row: SampleFeatures) -> str:
    out = []
    for name in FEATURE_COLUMNS:
        value = getattr(row, name)
        if value is None:
            out.append("")
        elif isinstance(value, bool):
            out.append("1" if value else "0")
        else:
            out.append(str(value))
    return "\t".join(out) + "\n"


def parse_features(line: str) -> SampleFeatures:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != len(FEATURE_COLUMNS):
        raise MalformedRow(f"expected {len(FEATURE_COLUMNS)} columns, got {len(parts)}")
    kwargs = {}
    try:
        for name, raw in zip(FEATURE_COLUMNS, parts):
            if raw == "":
                kwargs[name] = None
            elif name in _INT_COLUMNS:
                kwargs[name] = int(raw)
            elif name in _BOOL_COLUMNS:
                if raw not in ("0", "1"):
                    raise ValueError(f"{name}: bad boolean {raw!r}")
                kwargs[name] = raw == "1"
            else:
                kwargs[name] = raw
    except ValueError as exc:
        raise MalformedRow(str(exc)) from None
    if kwargs["sha256"] is None or None in (kwargs["scan_date"], kwargs["fseen_date"], kwargs["vt_score"]):
        raise MalformedRow("missing required column")
    if kwargs["is_new"] is None:
        kwargs["is_new"] = False
    return SampleFeatures(**kwargs)


def check_header(line: str) -> None:
    parts = line.rstrip("\n").split("\t")
    if parts[0] != FEATURE_FILE_MAGIC:
        raise MalformedRow(f"not a feature file (header {line[:20]!r})")
    if len(parts) > 1 and tuple(parts[1:]) != FEATURE_COLUMNS:
        raise MalformedRow("feature file columns do not match this version")


def write_features(path: str | os.PathLike, rows: Iterable[SampleFeatures]) -> int:
    n = 0
    with open_text(path, "w") as fh:
        fh.write(FEATURE_HEADER)
        for row in rows:
            fh.write(format_features(row))
            n += 1
    return n


def read_features(path: str | os.PathLike) -> Iterator[SampleFeatures]:
    with open_text(path) as fh:
        first = fh.readline()
        if first:
            check_header(first)
        for line in fh:
            if line.strip():
                yield parse_features(line)


def with_labels(row: SampleFeatures, family: Optional[str], is_pup: Optional[bool]) -> SampleFeatures:
    return replace(row, family=_clean(family), is_pup=is_pup)

"""Synthetic feeds and digests with known ground truth, for tests and benchmarks."""
from __future__ import annotations

import json
import os
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .report_model import FEATURE_COLUMNS, FEATURE_HEADER, Interval, open_text
from .tlsh_metric import BODY_BYTES, TlshDigest

DAY = 86400
SYNTH_T0 = 1_609_459_200  # 2021-01-01 UTC
ENGINES = tuple(f"engine{i:02d}" for i in range(40))

# trid string and the filetype it maps to in the packaged mapping
_TRID = (
    ("Win32 Executable (generic)", "peexe"),
    ("Android Package", "apk"),
    ("Adobe Portable Document Format", "pdf"),
    ("HyperText Markup Language", "html"),
    ("ELF Executable and Linkable format", "elf"),
    ("Java Archive", "jar"),
    ("ZIP compressed archive", "zip"),
)


def random_sha(rng: random.Random) -> str:
    return f"{rng.getrandbits(256):064x}"


def random_hex(rng: random.Random, n: int) -> str:
    return f"{rng.getrandbits(4 * n):0{n}x}"


# -- TLSH digests ----------------------------------------------------------


def random_digest(rng: random.Random) -> TlshDigest:
    return TlshDigest(
        checksum=rng.randrange(256),
        lvalue=rng.randrange(256),
        q1ratio=rng.randrange(16),
        q2ratio=rng.randrange(16),
        body=bytes(rng.randrange(256) for _ in range(BODY_BYTES)),
    )


def mutate_digest(d: TlshDigest, rng: random.Random, changes: int) -> TlshDigest:
    """Nudge ``changes`` random body buckets by one step; header moves rarely."""
    body = bytearray(d.body)
    for _ in range(changes):
        pos = rng.randrange(BODY_BYTES * 4)
        byte, shift = pos // 4, 6 - 2 * (pos % 4)
        bucket = (body[byte] >> shift) & 3
        bucket = bucket + 1 if bucket == 0 or (bucket < 3 and rng.random() < 0.5) else bucket - 1
        body[byte] = (body[byte] & ~(3 << shift) & 0xFF) | (bucket << shift)
    lvalue = (d.lvalue + rng.choice((-1, 1))) % 256 if rng.random() < 0.1 else d.lvalue
    checksum = rng.randrange(256) if rng.random() < 0.3 else d.checksum
    return TlshDigest(checksum, lvalue, d.q1ratio, d.q2ratio, bytes(body))


def digest_families(
    n: int, rng: random.Random, families: int = 80, max_changes: int = 12, noise: float = 0.2
) -> list[TlshDigest]:
    """``n`` digests: a ``noise`` share of unrelated ones, the rest scattered
    around ``families`` centres (and chained off earlier members) so that
    threshold links form chains as well as cliques."""
    centres = [random_digest(rng) for _ in range(max(1, families))]
    members: dict[int, list[TlshDigest]] = defaultdict(list)
    out = []
    for _ in range(n):
        if rng.random() < noise:
            out.append(random_digest(rng))
            continue
        f = rng.randrange(len(centres))
        base = rng.choice(members[f]) if members[f] and rng.random() < 0.5 else centres[f]
        d = mutate_digest(base, rng, rng.randint(1, max_changes))
        members[f].append(d)
        out.append(d)
    return out


# -- feature files ---------------------------------------------------------


def feature_rows(
    n_rows: int,
    seed: int = 0,
    null_frac: float = 0.3,
    dup_frac: float = 0.1,
    distinct: Optional[int] = None,
) -> Iterator[str]:
    """Feature-file lines (no header) with every cluster feature populated
    from a skewed value pool. A ``dup_frac`` share of rows repeats an
    earlier sample with the same values and a later scan date."""
    rng = random.Random(seed)
    distinct = distinct or max(2, n_rows // 4)
    pools: dict[str, list[str]] = {}
    width = {"tlsh": 70, "imphash": 32, "authentihash": 64, "cert_thumbprint": 40}
    features = ("tlsh", "vhash", "imphash", "richpe_hash", "authentihash", "icon_hash", "cert_thumbprint", "package_name")
    recent: list[list[str]] = []
    ncols = len(FEATURE_COLUMNS)
    idx = {name: FEATURE_COLUMNS.index(name) for name in FEATURE_COLUMNS}
    for _ in range(n_rows):
        if recent and rng.random() < dup_frac:
            row = list(rng.choice(recent))
            row[idx["scan_date"]] = str(int(row[idx["scan_date"]]) + rng.randint(1, 10 * DAY))
            yield "\t".join(row) + "\n"
            continue
        row = [""] * ncols
        row[idx["sha256"]] = random_sha(rng)
        fseen = SYNTH_T0 + rng.randrange(30 * DAY)
        row[idx["scan_date"]] = str(fseen + rng.randrange(DAY))
        row[idx["fseen_date"]] = str(fseen)
        row[idx["vt_score"]] = str(rng.choice((0, 0, 0, 1, 5, 20)))
        row[idx["is_new"]] = "1"
        for name in features:
            if rng.random() < null_frac:
                continue
            pool = pools.setdefault(name, [])
            # skewed reuse: small values recur often, large ones rarely
            k = int(distinct * rng.random() ** 3)
            while len(pool) <= k:
                if name == "package_name":
                    pool.append(f"com.synth.app{len(pool)}")
                else:
                    pool.append(random_hex(rng, width.get(name, 32)))
            row[idx[name]] = pool[k]
        if len(recent) < 1000:
            recent.append(row)
        else:
            recent[rng.randrange(1000)] = row
        yield "\t".join(row) + "\n"


def write_feature_file(path: str | os.PathLike, n_rows: int, seed: int = 0, **kwargs) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FEATURE_HEADER)
        for line in feature_rows(n_rows, seed, **kwargs):
            fh.write(line)
            n += 1
    return n


# -- report feeds ----------------------------------------------------------


@dataclass
class Manifest:
    window: tuple[int, int]
    daily: dict[int, list[int]] = field(default_factory=dict)  # day -> [reports, samples, new], gap days left out
    filetypes: dict[str, int] = field(default_factory=dict)  # latest-report filetype per sample
    families: dict[str, str] = field(default_factory=dict)  # sha256 -> planted family
    flagged: list[str] = field(default_factory=list)  # zero-score members of malicious vhash clusters
    fud: list[str] = field(default_factory=list)
    fud_in_grace: list[str] = field(default_factory=list)
    not_fud: list[str] = field(default_factory=list)
    gaps: list[list[int]] = field(default_factory=list)
    reports: int = 0

    def to_json(self) -> str:
        doc = dict(self.__dict__)
        doc["daily"] = {str(k): v for k, v in sorted(self.daily.items())}
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        doc = json.loads(text)
        doc["window"] = tuple(doc["window"])
        doc["daily"] = {int(k): v for k, v in doc["daily"].items()}
        return cls(**doc)


def _labels(rng: random.Random, score: int, family: str) -> list[list[str]]:
    """One detection label per detecting engine; silent engines are omitted."""
    return [[engine, f"Trojan.Win32.{family.capitalize()}.{rng.choice('abcxyz')}"] for engine in rng.sample(ENGINES, score)]


def synth_feed(
    n_samples: int, days: int = 30, seed: int = 0, fud: int = 10, gap_day: int = 10
) -> tuple[list[dict], Manifest]:
    """Report dicts (one JSON line each) and the matching manifest.

    Samples are grouped into vhash clusters of 1 to 40 members. About a
    third of the clusters are malicious (most members score at least 4, a
    few planted members score 0), a third benign and the rest mixed with a
    detected minority. Every sample keeps one score across its reports and
    its first report is scanned at its first-seen date.

    Five groups of ``fud`` extra samples (no vhash) exercise originally-FUD
    detection: observed zero first scans flipping after or within the grace
    period, and flips whose zero first scan was not collected, first seen
    inside or outside the collection gap or within the grace period.
    """
    rng = random.Random(seed)
    t0 = SYNTH_T0
    window = Interval(t0, t0 + days * DAY)
    gap = Interval(t0 + gap_day * DAY, t0 + (gap_day + 1) * DAY)
    manifest = Manifest(window=(window.start, window.end), gaps=[[gap.start, gap.end]])
    reports: list[dict] = []
    cluster_of: list[int] = []
    remaining = max(0, n_samples - 5 * fud)
    next_cid = 0
    while remaining > 0:
        size = min(remaining, rng.randint(1, 40))
        cluster_of.extend([next_cid] * size)
        next_cid += 1
        remaining -= size

    by_cluster: dict[int, list[int]] = defaultdict(list)
    for i, cid in enumerate(cluster_of):
        by_cluster[cid].append(i)
    kinds = {cid: rng.choice(("malicious", "benign", "mixed")) for cid in by_cluster}
    scores: dict[int, int] = {}
    for cid, idx in by_cluster.items():
        size = len(idx)
        if kinds[cid] == "malicious":
            zeros = rng.randint(0, (size - 1) // 3)
        elif kinds[cid] == "benign":
            zeros = size
        else:
            zeros = size // 2 + 1
        for j, i in enumerate(rng.sample(idx, size)):
            if j < zeros:
                scores[i] = 0
            else:
                scores[i] = rng.randint(4 if kinds[cid] == "malicious" else 1, 30)

    vhash_of = {cid: random_hex(rng, 32) for cid in by_cluster}
    family_of = {cid: f"synth{cid:05d}x" for cid in by_cluster}
    trid_of = {cid: rng.choice(_TRID) for cid in by_cluster}
    ft_counts: Counter[str] = Counter()
    daily_reports: Counter[int] = Counter()
    daily_samples: dict[int, set[str]] = defaultdict(set)
    daily_new: dict[int, set[str]] = defaultdict(set)

    def emit(rec: dict) -> None:
        reports.append(rec)
        if rec["scan_date"] in window:
            day = rec["scan_date"] - rec["scan_date"] % DAY
            daily_reports[day] += 1
            daily_samples[day].add(rec["sha256"])
            if rec["fseen_date"] in window and rec["fseen_date"] - rec["fseen_date"] % DAY == day:
                daily_new[day].add(rec["sha256"])

    for i, cid in enumerate(cluster_of):
        sha = random_sha(rng)
        fseen = t0 + rng.randrange(-5 * DAY, days * DAY)
        trid, ft = trid_of[cid]
        score = scores[i]
        manifest.families[sha] = family_of[cid]
        ft_counts[ft] += 1
        scan = fseen
        for _ in range(rng.randint(1, 3)):
            emit({
                "sha256": sha,
                "scan_date": scan,
                "fseen_date": fseen,
                "vt_score": score,
                "detection_labels": _labels(rng, score, family_of[cid]),
                "trid_file_type": trid,
                "vhash": vhash_of[cid],
                "imphash": random_hex(rng, 32) if rng.random() < 0.5 else None,
            })
            scan += rng.randint(1, 5 * DAY)
        if kinds[cid] == "malicious" and len(by_cluster[cid]) > 1 and score == 0:
            manifest.flagged.append(sha)

    def fud_sample(fseen: int, scans: list[tuple[int, int]]) -> str:
        sha = random_sha(rng)
        for when, score in scans:
            emit({"sha256": sha, "scan_date": when, "fseen_date": fseen, "vt_score": score,
                  "detection_labels": _labels(rng, score, "fudsynth"), "trid_file_type": _TRID[0][0]})
        ft_counts["peexe"] += 1
        return sha

    def outside_gap() -> int:
        while True:
            t = t0 + rng.randrange((days - 2) * DAY)
            if t not in gap:
                return t

    for _ in range(fud):
        t = outside_gap()
        manifest.fud.append(fud_sample(t, [(t, 0), (t + rng.randint(301, 7 * DAY), 9)]))
        t = outside_gap()
        manifest.fud_in_grace.append(fud_sample(t, [(t, 0), (t + rng.randint(1, 300), 9)]))
        t = outside_gap()
        manifest.fud.append(fud_sample(t, [(t + rng.randint(301, 7 * DAY), 7)]))
        t = outside_gap()
        manifest.fud_in_grace.append(fud_sample(t, [(t + rng.randint(1, 300), 7)]))
        t = gap.start + rng.randrange(DAY)
        manifest.not_fud.append(fud_sample(t, [(t + rng.randint(2 * DAY, 4 * DAY), 7)]))

    rng.shuffle(reports)
    manifest.reports = len(reports)
    manifest.filetypes = dict(sorted(ft_counts.items()))
    manifest.flagged.sort()
    manifest.fud.sort()
    manifest.fud_in_grace.sort()
    manifest.not_fud.sort()
    manifest.daily = {
        d: [daily_reports[d], len(daily_samples[d]), len(daily_new.get(d, ()))]
        for d in sorted(daily_reports)
        if not (gap.start < d + DAY and gap.end > d)
    }
    return reports, manifest


def write_feed(path: str | os.PathLike, reports: list[dict]) -> None:
    with open_text(path, "w") as fh:
        for rec in reports:
            fh.write(json.dumps({k: v for k, v in rec.items() if v is not None}, sort_keys=True) + "\n")

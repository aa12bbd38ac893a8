"""TLSH digest decoding and scoring.

Only digests are handled here: the pipeline never sees file bytes, so there
is no digest computation. Scoring follows the reference TLSH ``diff`` (with
the length component enabled).

Two scores are exposed:

* :func:`distance` is the TLSH score. It is *not* a metric: a body bucket
  difference of 3 costs 6 while 1 + 2 costs 3, and the length and quartile
  terms jump by a factor of 12 past a difference of 1.
* :func:`bound_distance` is a true metric (sum of per-field circular/L1
  distances) that never exceeds :func:`distance`. Vantage-point search prunes
  with it, which keeps exact radius queries exact.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DIGEST_HEX_LEN = 70
BODY_BYTES = 32
NORMALIZATION_CAP = 300

_LENGTH_MULT = 12
_QRATIO_MULT = 12
_RANGE_LVALUE = 256
_RANGE_QRATIO = 16

_HEX_RE = re.compile(r"[0-9a-fA-F]{70}")


class InvalidDigest(ValueError):
    pass


def _swap(byte: int) -> int:
    return ((byte & 0x0F) << 4) | (byte >> 4)


def _bucket_cost(x: int, y: int) -> int:
    d = abs(x - y)
    return 6 if d == 3 else d


def _byte_table(cost) -> np.ndarray:
    table = np.zeros((256, 256), dtype=np.int32)
    for a in range(256):
        for b in range(256):
            table[a, b] = sum(cost((a >> s) & 3, (b >> s) & 3) for s in (0, 2, 4, 6))
    return table


_BODY_TABLE = _byte_table(_bucket_cost)
_L1_TABLE = _byte_table(lambda x, y: abs(x - y))
# flat lists are faster than numpy scalars for single-pair scoring
_BODY_FLAT = _BODY_TABLE.ravel().tolist()
_L1_FLAT = _L1_TABLE.ravel().tolist()


@dataclass(frozen=True, slots=True)
class TlshDigest:
    """Decoded digest. Header fields hold their logical (unswapped) values."""

    checksum: int
    lvalue: int
    q1ratio: int
    q2ratio: int
    body: bytes

    @property
    def buckets(self) -> tuple[int, ...]:
        return tuple((byte >> s) & 3 for byte in self.body for s in (6, 4, 2, 0))

    def hex(self) -> str:
        head = bytes((_swap(self.checksum), _swap(self.lvalue), (self.q1ratio << 4) | self.q2ratio))
        return (head + self.body).hex().upper()

    def __str__(self) -> str:
        return "T1" + self.hex()


def parse_digest(text: str) -> TlshDigest:
    """Decode a 70-char digest, optionally prefixed with the ``T1`` version tag."""
    if not isinstance(text, str):
        raise InvalidDigest(f"digest must be text, got {type(text).__name__}")
    s = text.strip()
    if len(s) == DIGEST_HEX_LEN + 2 and s[:2] in ("T1", "t1"):
        s = s[2:]
    if len(s) != DIGEST_HEX_LEN or not _HEX_RE.fullmatch(s):
        raise InvalidDigest(f"not a TLSH digest: {text!r}")
    raw = bytes.fromhex(s)
    return TlshDigest(
        checksum=_swap(raw[0]),
        lvalue=_swap(raw[1]),
        q1ratio=raw[2] >> 4,
        q2ratio=raw[2] & 0x0F,
        body=raw[3:],
    )


def _mod_diff(x: int, y: int, r: int) -> int:
    d = abs(x - y)
    return min(d, r - d)


def header_distance(a: TlshDigest, b: TlshDigest) -> int:
    diff = 0
    ldiff = _mod_diff(a.lvalue, b.lvalue, _RANGE_LVALUE)
    diff += ldiff if ldiff <= 1 else ldiff * _LENGTH_MULT
    for qa, qb in ((a.q1ratio, b.q1ratio), (a.q2ratio, b.q2ratio)):
        qdiff = _mod_diff(qa, qb, _RANGE_QRATIO)
        diff += qdiff if qdiff <= 1 else (qdiff - 1) * _QRATIO_MULT
    if a.checksum != b.checksum:
        diff += 1
    return diff


def distance(a: TlshDigest, b: TlshDigest) -> int:
    t = _BODY_FLAT
    return header_distance(a, b) + sum([t[(x << 8) | y] for x, y in zip(a.body, b.body)])


def bound_distance(a: TlshDigest, b: TlshDigest) -> int:
    """Metric lower bound of :func:`distance` used for search-tree pruning."""
    t = _L1_FLAT
    return (
        _mod_diff(a.lvalue, b.lvalue, _RANGE_LVALUE)
        + _mod_diff(a.q1ratio, b.q1ratio, _RANGE_QRATIO)
        + _mod_diff(a.q2ratio, b.q2ratio, _RANGE_QRATIO)
        + (a.checksum != b.checksum)
        + sum([t[(x << 8) | y] for x, y in zip(a.body, b.body)])
    )


def normalized_distance(a: TlshDigest, b: TlshDigest, cap: int = NORMALIZATION_CAP) -> float:
    return min(distance(a, b), cap) / cap


class DigestArray:
    """Column-wise digest storage for vectorized one-to-many scoring."""

    def __init__(self, digests: Sequence[TlshDigest]):
        n = len(digests)
        self.checksum = np.fromiter((d.checksum for d in digests), dtype=np.int32, count=n)
        self.lvalue = np.fromiter((d.lvalue for d in digests), dtype=np.int32, count=n)
        self.q1 = np.fromiter((d.q1ratio for d in digests), dtype=np.int32, count=n)
        self.q2 = np.fromiter((d.q2ratio for d in digests), dtype=np.int32, count=n)
        if n:
            self.body = np.frombuffer(b"".join(d.body for d in digests), dtype=np.uint8).reshape(n, BODY_BYTES)
        else:
            self.body = np.zeros((0, BODY_BYTES), dtype=np.uint8)

    def __len__(self) -> int:
        return len(self.lvalue)

    @classmethod
    def from_hex(cls, items: Iterable[str]) -> "DigestArray":
        return cls([parse_digest(s) for s in items])

    def __getitem__(self, i: int) -> TlshDigest:
        return TlshDigest(
            int(self.checksum[i]), int(self.lvalue[i]), int(self.q1[i]), int(self.q2[i]), self.body[i].tobytes()
        )

    def distances(self, q: TlshDigest, idx: np.ndarray | None = None) -> np.ndarray:
        """TLSH distances from ``q`` to every stored digest (or the subset ``idx``)."""
        sel = slice(None) if idx is None else idx
        ld = np.abs(self.lvalue[sel] - q.lvalue)
        ld = np.minimum(ld, _RANGE_LVALUE - ld)
        out = np.where(ld <= 1, ld, ld * _LENGTH_MULT)
        for col, qv in ((self.q1, q.q1ratio), (self.q2, q.q2ratio)):
            qd = np.abs(col[sel] - qv)
            qd = np.minimum(qd, _RANGE_QRATIO - qd)
            out = out + np.where(qd <= 1, qd, (qd - 1) * _QRATIO_MULT)
        out = out + (self.checksum[sel] != q.checksum)
        qbody = np.frombuffer(q.body, dtype=np.uint8)
        out = out + _BODY_TABLE[qbody[None, :], self.body[sel]].sum(axis=1)
        return out.astype(np.int64)

    def bound_distances(self, q: TlshDigest, idx: np.ndarray | None = None) -> np.ndarray:
        """Vectorized :func:`bound_distance`."""
        sel = slice(None) if idx is None else idx
        out = np.zeros(len(self.lvalue[sel]), dtype=np.int64)
        for col, qv, r in ((self.lvalue, q.lvalue, _RANGE_LVALUE), (self.q1, q.q1ratio, _RANGE_QRATIO), (self.q2, q.q2ratio, _RANGE_QRATIO)):
            d = np.abs(col[sel] - qv)
            out += np.minimum(d, r - d)
        out += self.checksum[sel] != q.checksum
        qbody = np.frombuffer(q.body, dtype=np.uint8)
        out += _L1_TABLE[qbody[None, :], self.body[sel]].sum(axis=1)
        return out

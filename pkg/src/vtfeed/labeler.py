"""Small AVClass-style family labeler.

Detection labels are split into tokens, tokens are mapped through an alias
table and a category taxonomy, and the family is the plurality candidate
token (known family or unknown token) reported by at least two engines.
"""
from __future__ import annotations

import os
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

MIN_FAMILY_SUPPORT = 2
PUP_CATEGORY = "CLASS:pup"
CATEGORIES = ("CLASS", "BEH", "FILE", "GEN", "FAM")

# platform/engine boilerplate; the packaged taxonomy lists the same tokens as NOISE
DEFAULT_NOISE = frozenset({"win32", "win64", "w32", "w64", "msil", "variant", "heur", "heuristic", "behaveslike"})

_SPLIT_RE = re.compile(r"[^0-9a-z]+")
_HEXISH_RE = re.compile(r"[0-9a-f]+")


@dataclass(frozen=True)
class Taxonomy:
    category_map: dict[str, str] = field(default_factory=dict)
    alias_map: dict[str, str] = field(default_factory=dict)
    noise: frozenset[str] = frozenset()

    def __post_init__(self):
        for alias, target in self.alias_map.items():
            if target in self.alias_map:
                raise ValueError(f"alias target {target!r} (from {alias!r}) is itself an alias")

    @classmethod
    def parse(cls, taxonomy_text: str, alias_text: str = "") -> "Taxonomy":
        categories: dict[str, str] = {}
        noise = set()
        for token, category in _pairs(taxonomy_text, "taxonomy"):
            if category.upper() == "NOISE":
                noise.add(token)
                continue
            head = category.split(":", 1)[0].upper()
            if head not in CATEGORIES:
                raise ValueError(f"taxonomy: unknown category {category!r} for {token!r}")
            categories[token] = head + category[len(head):]
        aliases = dict(_pairs(alias_text, "alias"))
        return cls(categories, aliases, frozenset(noise))

    @classmethod
    def load(
        cls,
        taxonomy_path: str | os.PathLike | None = None,
        alias_path: str | os.PathLike | None = None,
    ) -> "Taxonomy":
        data = resources.files("vtfeed.data")
        tax = Path(taxonomy_path).read_text("utf-8") if taxonomy_path else data.joinpath("taxonomy.tsv").read_text("utf-8")
        if alias_path:
            alias = Path(alias_path).read_text("utf-8")
        elif taxonomy_path:
            alias = ""
        else:
            alias = data.joinpath("aliases.tsv").read_text("utf-8")
        return cls.parse(tax, alias)


def _pairs(text: str, what: str) -> Iterable[tuple[str, str]]:
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 2:
            raise ValueError(f"{what} line {lineno}: expected two tab-separated fields")
        yield parts[0].strip().lower(), parts[1].strip()


@dataclass(frozen=True)
class LabelResult:
    family: Optional[str]
    tags: tuple[tuple[str, int], ...] = ()
    is_pup: bool = False


def tokenize_label(engine: str, label: str, noise: Iterable[str] = DEFAULT_NOISE) -> list[str]:
    noise = noise if isinstance(noise, (set, frozenset)) else set(noise)
    out = []
    for tok in _SPLIT_RE.split(label.lower()):
        if len(tok) < 4 or _HEXISH_RE.fullmatch(tok) or tok in noise:
            continue
        out.append(tok)
    return out


def resolve_token(token: str, taxonomy: Taxonomy) -> str:
    """Return the tag for ``token``: ``FAM:x``/``UNK:x`` for family candidates,
    otherwise the category path ending in the token."""
    token = taxonomy.alias_map.get(token, token)
    category = taxonomy.category_map.get(token)
    if category is None:
        return f"UNK:{token}"
    if category.rsplit(":", 1)[-1] == token:
        return category
    return f"{category}:{token}"


def is_candidate(tag: str) -> bool:
    return tag.startswith(("FAM:", "UNK:"))


def label_sample(detection_labels: Iterable[tuple[str, Optional[str]]], taxonomy: Taxonomy) -> LabelResult:
    candidates: Counter[str] = Counter()
    other: Counter[str] = Counter()
    labeled = pup = 0
    seen_engines = set()
    for engine, label in detection_labels:
        if label is None or engine in seen_engines:
            continue
        seen_engines.add(engine)
        labeled += 1
        tags = {resolve_token(t, taxonomy) for t in tokenize_label(engine, label, taxonomy.noise)}
        if any(t == PUP_CATEGORY or t.startswith(PUP_CATEGORY + ":") for t in tags):
            pup += 1
        for tag in tags:
            (candidates if is_candidate(tag) else other)[tag] += 1

    family = None
    if candidates:
        # rank by engine count, then bare token so FAM/UNK prefixes do not bias ties
        best = min(candidates.items(), key=lambda kv: (-kv[1], kv[0].split(":", 1)[1]))
        if best[1] >= MIN_FAMILY_SUPPORT:
            family = best[0]
    tags = tuple(sorted(((t, c) for t, c in other.items() if c >= MIN_FAMILY_SUPPORT), key=lambda kv: (-kv[1], kv[0])))
    return LabelResult(family=family, tags=tags, is_pup=labeled > 0 and 2 * pup > labeled)

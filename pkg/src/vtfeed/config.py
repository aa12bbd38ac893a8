"""Pipeline configuration: a JSON file with command-line overrides."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from datetime import date, datetime, timezone
from typing import Any, Mapping, Optional, Union

from .extsort import DEFAULT_BUDGET, MiB
from .report_model import Interval

MIN_BUDGET = 64 * MiB
UNBOUNDED = Interval(0, 2**62)

Timestamp = Union[int, str]


class ConfigError(ValueError):
    pass


def parse_time(value: Timestamp) -> int:
    """Epoch seconds from an int or an ISO-8601 date/datetime (UTC when naive)."""
    if isinstance(value, bool):
        raise ConfigError(f"bad timestamp {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        text = value.strip()
        if text.lstrip("-").isdigit():
            return int(text)
        try:
            if len(text) == 10:
                d = date.fromisoformat(text)
                dt = datetime(d.year, d.month, d.day, tzinfo=timezone.utc)
            else:
                dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
                if dt.tzinfo is None:
                    dt = dt.replace(tzinfo=timezone.utc)
        except ValueError:
            raise ConfigError(f"bad timestamp {value!r}") from None
        return int(dt.timestamp())
    raise ConfigError(f"bad timestamp {value!r}")


def parse_interval(value: Any) -> Interval:
    if isinstance(value, str) and "/" in value:
        value = value.split("/", 1)
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"interval must be [start, end], got {value!r}")
    try:
        return Interval(parse_time(value[0]), parse_time(value[1]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class PipelineConfig:
    window: Interval = UNBOUNDED
    gaps: tuple[Interval, ...] = ()
    budget: int = DEFAULT_BUDGET
    tmp_dir: Optional[str] = None
    seed: int = 0
    taxonomy: Optional[str] = None
    aliases: Optional[str] = None
    filetypes: Optional[str] = None
    low_threshold: int = 1
    high_threshold: int = 4
    cdist: int = 30
    hac_threshold: float = 0.8
    hac_max_samples: int = 50_000
    fud_threshold: int = 4
    fud_grace: int = 300
    threads: int = 1
    extra: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.budget < MIN_BUDGET:
            raise ConfigError(f"budget must be at least {MIN_BUDGET} bytes")
        if min(self.low_threshold, self.high_threshold, self.fud_threshold, self.cdist, self.fud_grace) < 0:
            raise ConfigError("thresholds must be non-negative")
        if not 0.0 <= self.hac_threshold <= 1.0:
            raise ConfigError("hac_threshold must be in [0, 1]")
        if self.hac_max_samples < 1 or self.threads < 1:
            raise ConfigError("hac_max_samples and threads must be positive")

    @classmethod
    def from_mapping(cls, doc: Mapping[str, Any]) -> "PipelineConfig":
        known = {f.name for f in fields(cls)} - {"extra"}
        kwargs: dict[str, Any] = {}
        extra = {}
        for key, value in doc.items():
            if key not in known:
                extra[key] = value
            elif key == "window":
                kwargs[key] = parse_interval(value)
            elif key == "gaps":
                kwargs[key] = tuple(parse_interval(g) for g in value)
            else:
                kwargs[key] = value
        for key in ("budget", "seed", "low_threshold", "high_threshold", "cdist", "hac_max_samples",
                    "fud_threshold", "fud_grace", "threads"):
            if key in kwargs and (isinstance(kwargs[key], bool) or not isinstance(kwargs[key], int)):
                raise ConfigError(f"{key} must be an integer")
        return cls(extra=extra, **kwargs)

    @classmethod
    def load(cls, path: Optional[str | os.PathLike] = None) -> "PipelineConfig":
        if path is None:
            return cls()
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_mapping(doc)

    def override(self, **changes: Any) -> "PipelineConfig":
        """Copy with every non-None keyword applied."""
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_dict(self) -> dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "extra"}
        out["window"] = [self.window.start, self.window.end]
        out["gaps"] = [[g.start, g.end] for g in self.gaps]
        return out

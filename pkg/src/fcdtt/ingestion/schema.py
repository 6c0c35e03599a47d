"""Record and geometry types for floating-car-data percentile datasets."""
from __future__ import annotations

import bisect
import datetime as dt
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from ..core import PercentileDistribution

__all__ = [
    "DAY_S",
    "NATIVE_TOD_S",
    "SchemaError",
    "Link",
    "Route",
    "TodInterval",
    "TodScheme",
    "DEMAND_BOUNDARIES_S",
    "LinkRecord",
    "RouteRecord",
    "FcdQuery",
    "WEEKDAYS",
    "parse_weekdays",
]

DAY_S = 86400
NATIVE_TOD_S = 300
# night | morning rush | daytime | evening rush | evening
DEMAND_BOUNDARIES_S = (0, 6 * 3600, 10 * 3600, 16 * 3600, 19 * 3600, DAY_S)
CONSISTENCY_TOL = 0.05
WEEKDAYS = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")


class SchemaError(ValueError):
    """A record or geometry entry violates the dataset schema."""


@dataclass(frozen=True)
class Link:
    id: str
    index_on_route: int
    length: float
    speed_limit: float
    midpoint_position: float

    def __post_init__(self):
        if not self.length > 0:
            raise SchemaError(f"link {self.id}: length must be > 0")
        if not self.speed_limit > 0:
            raise SchemaError(f"link {self.id}: speed limit must be > 0")


@dataclass(frozen=True)
class Route:
    id: str
    links: tuple[Link, ...]

    def __post_init__(self):
        if not self.links:
            raise SchemaError(f"route {self.id}: needs at least one link")
        ids = [lk.id for lk in self.links]
        if len(set(ids)) != len(ids):
            raise SchemaError(f"route {self.id}: duplicate link ids")

    @classmethod
    def from_segments(cls, route_id: str, segments: Iterable[tuple[str, float, float]]) -> "Route":
        """Build from ordered ``(link_id, length_m, speed_limit_kmh)`` triples."""
        links = []
        start = 0.0
        for i, (link_id, length, limit) in enumerate(segments):
            length = float(length)
            links.append(Link(str(link_id), i, length, float(limit), start + length / 2.0))
            start += length
        return cls(str(route_id), tuple(links))

    @property
    def total_length(self) -> float:
        return float(sum(lk.length for lk in self.links))

    @property
    def link_ids(self) -> list[str]:
        return [lk.id for lk in self.links]

    @property
    def lengths(self) -> np.ndarray:
        return np.array([lk.length for lk in self.links])

    @property
    def speed_limits(self) -> np.ndarray:
        return np.array([lk.speed_limit for lk in self.links])

    def free_flow_time(self) -> float:
        """Seconds to traverse the route at every link's speed limit."""
        return float(np.sum(self.lengths / (self.speed_limits / 3.6)))

    def __len__(self):
        return len(self.links)


@dataclass(frozen=True, order=True)
class TodInterval:
    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start < self.end <= DAY_S):
            raise SchemaError(f"invalid TOD interval [{self.start}, {self.end})")

    @property
    def width(self) -> int:
        return self.end - self.start

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start + self.end)

    def contains(self, t: float) -> bool:
        return self.start <= t < self.end

    def overlaps(self, other: "TodInterval") -> bool:
        return self.start < other.end and other.start < self.end

    def covers(self, other: "TodInterval") -> bool:
        return self.start <= other.start and other.end <= self.end

    def __str__(self):
        return f"{_hhmm(self.start)}-{_hhmm(self.end)}"


def _hhmm(s: int) -> str:
    return f"{s // 3600:02d}:{(s % 3600) // 60:02d}"


_SCHEME_ALIASES = {
    "5min": "fixed-5min",
    "fixed-5min": "fixed-5min",
    "20min": "fixed-20min",
    "fixed-20min": "fixed-20min",
    "demand5": "demand-based-5",
    "demand-based-5": "demand-based-5",
}


@dataclass(frozen=True)
class TodScheme:
    name: str
    intervals: tuple[TodInterval, ...]
    _starts: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.intervals:
            raise SchemaError("TOD scheme has no intervals")
        if self.intervals[0].start != 0 or self.intervals[-1].end != DAY_S:
            raise SchemaError("TOD scheme must cover [0, 86400)")
        for a, b in zip(self.intervals, self.intervals[1:]):
            if a.end != b.start:
                raise SchemaError(f"TOD scheme gap or overlap at {a.end}")
        object.__setattr__(self, "_starts", tuple(iv.start for iv in self.intervals))

    @classmethod
    def fixed(cls, minutes: int) -> "TodScheme":
        width = int(minutes) * 60
        if width <= 0 or DAY_S % width:
            raise SchemaError(f"fixed interval width must divide a day, got {minutes} min")
        ivs = tuple(TodInterval(s, s + width) for s in range(0, DAY_S, width))
        return cls(f"fixed-{int(minutes)}min", ivs)

    @classmethod
    def demand_based(cls, boundaries: Sequence[int] = DEMAND_BOUNDARIES_S) -> "TodScheme":
        b = [int(x) for x in boundaries]
        if len(b) != 6:
            raise SchemaError("demand-based scheme needs 6 boundaries (5 intervals)")
        return cls("demand-based-5", tuple(TodInterval(s, e) for s, e in zip(b, b[1:])))

    @classmethod
    def from_name(cls, name: str) -> "TodScheme":
        key = _SCHEME_ALIASES.get(name)
        if key is None:
            raise SchemaError(f"unknown TOD scheme {name!r}")
        if key == "fixed-5min":
            return cls.fixed(5)
        if key == "fixed-20min":
            return cls.fixed(20)
        return cls.demand_based()

    @property
    def short_name(self) -> str:
        return {"fixed-5min": "5min", "fixed-20min": "20min", "demand-based-5": "demand5"}.get(
            self.name, self.name
        )

    @property
    def is_route_based(self) -> bool:
        return self.name == "demand-based-5"

    def index_of(self, t):
        """Interval index holding time ``t`` (seconds, wrapped into one day)."""
        tt = np.mod(np.asarray(t, dtype=float), DAY_S)
        idx = np.searchsorted(self._starts, tt, side="right") - 1
        return int(idx) if idx.ndim == 0 else idx

    def interval_at(self, t: float) -> TodInterval:
        return self.intervals[self.index_of(t)]

    def index_for(self, tod: TodInterval) -> int:
        """Index of the interval holding the midpoint of ``tod``."""
        return bisect.bisect_right(self._starts, tod.midpoint) - 1

    def __len__(self):
        return len(self.intervals)


def _check_consistency(kind: str, key, length: Optional[float], speed, tt) -> None:
    """speed p_k * travel time p_(100-k) should equal the link length (m -> km/h)."""
    prod = speed.values * tt.values[::-1] / 3.6
    ref = length if length is not None else float(np.median(prod))
    rel = np.abs(prod - ref) / ref
    worst = int(np.argmax(rel))
    if rel[worst] > CONSISTENCY_TOL:
        raise SchemaError(
            f"{kind} {key}: speed/travel-time percentiles inconsistent at index {worst} "
            f"(implied length {prod[worst]:.1f} m vs {ref:.1f} m)"
        )


@dataclass(frozen=True)
class LinkRecord:
    link_id: str
    date: dt.date
    tod: TodInterval
    sample_size: int
    speed_percentiles: Optional[PercentileDistribution]
    travel_time_percentiles: Optional[PercentileDistribution]
    speed_limit: float
    full_traversal: bool = False

    def __post_init__(self):
        key = (self.link_id, self.date.isoformat(), str(self.tod))
        if self.sample_size < 0:
            raise SchemaError(f"link record {key}: negative sample size")
        has_speed = self.speed_percentiles is not None
        has_tt = self.travel_time_percentiles is not None
        if self.sample_size == 0 and (has_speed or has_tt):
            raise SchemaError(f"link record {key}: sample size 0 but percentiles present")
        if self.sample_size > 0 and not (has_speed and has_tt):
            raise SchemaError(f"link record {key}: percentiles missing")
        if not self.speed_limit > 0:
            raise SchemaError(f"link record {key}: speed limit must be > 0")
        if has_speed:
            _check_consistency("link record", key, None, self.speed_percentiles,
                               self.travel_time_percentiles)

    @property
    def key(self) -> tuple[str, dt.date, int]:
        return (self.link_id, self.date, self.tod.start)

    @property
    def median_speed(self) -> float:
        return self.speed_percentiles.median

    @property
    def implied_length(self) -> float:
        return float(np.median(self.speed_percentiles.values
                               * self.travel_time_percentiles.values[::-1]) / 3.6)

    def check_length(self, length: float) -> None:
        if self.sample_size > 0:
            _check_consistency("link record", self.key, length,
                               self.speed_percentiles, self.travel_time_percentiles)


@dataclass(frozen=True)
class RouteRecord:
    route_id: str
    date: dt.date
    tod: TodInterval
    sample_size: int
    travel_time_percentiles: Optional[PercentileDistribution]
    full_traversal: bool = False

    def __post_init__(self):
        key = (self.route_id, self.date.isoformat(), str(self.tod))
        if self.sample_size < 0:
            raise SchemaError(f"route record {key}: negative sample size")
        if (self.sample_size == 0) != (self.travel_time_percentiles is None):
            raise SchemaError(f"route record {key}: sample size and percentiles disagree")

    @property
    def key(self) -> tuple[str, dt.date, int]:
        return (self.route_id, self.date, self.tod.start)


def parse_weekdays(spec) -> frozenset[int]:
    """Weekday numbers (Mon=0) from names, ints or a comma string like ``"mon,tue"``."""
    if isinstance(spec, str):
        spec = [s for s in spec.split(",") if s.strip()]
    out = set()
    for item in spec:
        if isinstance(item, (int, np.integer)):
            day = int(item)
        else:
            day = WEEKDAYS.index(str(item).strip().lower()[:3])
        if not 0 <= day <= 6:
            raise SchemaError(f"invalid weekday {item!r}")
        out.add(day)
    return frozenset(out)


@dataclass(frozen=True)
class FcdQuery:
    """Filter mirroring the request parameters of the data source.

    ``target`` is ``"link"`` or ``"route"``; ``ids`` optionally restricts to
    particular link/route ids (the request "location").
    """

    target: str
    date_range: tuple[dt.date, dt.date]
    days_of_week: frozenset[int] = frozenset(range(7))
    tod: TodInterval = TodInterval(0, DAY_S)
    full_traversal: bool = False
    ids: Optional[frozenset[str]] = None

    def __post_init__(self):
        if self.target not in ("link", "route"):
            raise SchemaError(f"query target must be 'link' or 'route', got {self.target!r}")
        lo, hi = self.date_range
        if lo > hi:
            raise SchemaError("query date range is empty")
        if not self.days_of_week:
            raise SchemaError("query needs at least one weekday")
        object.__setattr__(self, "days_of_week", parse_weekdays(self.days_of_week))
        if self.ids is not None:
            object.__setattr__(self, "ids", frozenset(self.ids))

    def matches(self, rec) -> bool:
        is_route = isinstance(rec, RouteRecord)
        if is_route != (self.target == "route"):
            return False
        if self.ids is not None:
            rid = rec.route_id if is_route else rec.link_id
            if rid not in self.ids:
                return False
        lo, hi = self.date_range
        if not (lo <= rec.date <= hi):
            return False
        if rec.date.weekday() not in self.days_of_week:
            return False
        if not rec.tod.overlaps(self.tod):
            return False
        if self.full_traversal and not rec.full_traversal:
            return False
        return True

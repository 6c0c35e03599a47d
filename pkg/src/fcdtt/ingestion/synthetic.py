"""Synthetic FCD scenarios with upstream-propagating congestion bands.

Each congestion event is a band in the (position, time) plane: the jam
forms at ``origin_m`` at ``onset_s`` and its front travels upstream at
``propagation_kmh`` (negative). A position ``x`` upstream of the origin is
congested for ``duration_s`` seconds starting at
``onset_s + (x - origin_m) / propagation``.
"""
from __future__ import annotations

import datetime as dt
import json
import os
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Mapping, Optional, Sequence

import numpy as np

from ..core import PERCENTILES, PercentileDistribution
from .dataset import Dataset
from .schema import DAY_S, NATIVE_TOD_S, LinkRecord, Route, RouteRecord, SchemaError, TodInterval, parse_weekdays

__all__ = [
    "CongestionEvent",
    "ScenarioSpec",
    "band_contains",
    "generate_synthetic",
    "load_scenario",
    "scenario_onsets",
    "true_median_speed",
]

# standard normal quantiles at 0.05..0.95, used to shape lognormal percentiles
_Z = np.array([NormalDist().inv_cdf(p) for p in PERCENTILES])
MIN_SPEED_KMH = 5.0


@dataclass(frozen=True)
class CongestionEvent:
    onset_s: float
    origin_m: float
    duration_s: float
    speed_drop_kmh: float
    propagation_kmh: float = -15.0
    extent_m: Optional[float] = None
    onset_jitter_s: float = 0.0
    onset_offsets_s: Mapping[str, float] = field(default_factory=dict)

    def front_time(self, x, onset):
        """Time the congestion front reaches ``x`` (m) for a given onset."""
        return onset + (np.asarray(x, dtype=float) - self.origin_m) / (self.propagation_kmh / 3.6)


def band_contains(event: CongestionEvent, onset: float, x, t) -> np.ndarray:
    """Boolean mask: is ``(x, t)`` inside the event's congested band."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    start = event.front_time(x, onset)
    reach = event.origin_m if event.extent_m is None else event.extent_m
    return (x <= event.origin_m) & (x >= event.origin_m - reach) & (t >= start) & (t < start + event.duration_s)


@dataclass(frozen=True)
class ScenarioSpec:
    route: Route
    dates: tuple[dt.date, ...]
    free_flow_kmh: float = 100.0
    events: tuple[CongestionEvent, ...] = ()
    free_spread: float = 0.05
    congested_spread: float = 0.25
    median_noise: float = 0.02
    mean_sample_size: float = 8.0
    route_mean_sample_size: float = 3.0
    full_traversal_fraction: float = 0.5
    unobserved_links: frozenset[str] = frozenset()
    tod_range: tuple[int, int] = (0, DAY_S)

    def __post_init__(self):
        if not self.dates:
            raise SchemaError("scenario needs at least one date")
        if not self.free_flow_kmh > MIN_SPEED_KMH:
            raise SchemaError("free-flow speed must exceed 5 km/h")
        lo, hi = self.tod_range
        if not (0 <= lo < hi <= DAY_S) or lo % NATIVE_TOD_S or hi % NATIVE_TOD_S:
            raise SchemaError("tod_range must be 5-minute aligned within the day")
        total = self.route.total_length
        for k, ev in enumerate(self.events):
            if not 0 <= ev.origin_m <= total:
                raise SchemaError(f"event {k}: origin {ev.origin_m} m outside route [0, {total}]")
            if not 0 <= ev.onset_s < DAY_S:
                raise SchemaError(f"event {k}: onset {ev.onset_s} s outside the day")
            if not ev.propagation_kmh < 0:
                raise SchemaError(f"event {k}: congestion must propagate upstream (negative speed)")
            if not ev.duration_s > 0:
                raise SchemaError(f"event {k}: duration must be positive")
            if not 0 <= ev.speed_drop_kmh < self.free_flow_kmh:
                raise SchemaError(f"event {k}: speed drop must lie in [0, free-flow speed)")
            if ev.extent_m is not None and not ev.extent_m > 0:
                raise SchemaError(f"event {k}: extent must be positive")
            if ev.onset_jitter_s < 0:
                raise SchemaError(f"event {k}: onset jitter must be non-negative")
        unknown = set(self.unobserved_links) - set(self.route.link_ids)
        if unknown:
            raise SchemaError(f"unobserved links not on route: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioSpec":
        """Build from the JSON scenario document described in the README."""
        route = _route_from_doc(doc)
        dates = _dates_from_doc(doc)
        events = tuple(_event_from_doc(e) for e in doc.get("events", []))
        kwargs = {k: doc[k] for k in (
            "free_flow_kmh", "free_spread", "congested_spread", "median_noise",
            "mean_sample_size", "route_mean_sample_size", "full_traversal_fraction",
        ) if k in doc}
        if "tod_range_s" in doc:
            kwargs["tod_range"] = tuple(int(v) for v in doc["tod_range_s"])
        return cls(
            route=route,
            dates=dates,
            events=events,
            unobserved_links=frozenset(doc.get("unobserved_links", ())),
            **kwargs,
        )


def _route_from_doc(doc):
    rid = doc.get("route_id", "R1")
    if "links" in doc:
        segs = [(lk["link_id"], lk["length_m"], lk["speed_limit_kmh"]) for lk in doc["links"]]
    else:
        n = int(doc["n_links"])
        segs = [(f"L{i:03d}", doc["link_length_m"], doc.get("speed_limit_kmh", 100.0)) for i in range(n)]
    return Route.from_segments(rid, segs)


def _dates_from_doc(doc):
    if "dates" in doc:
        return tuple(sorted(dt.date.fromisoformat(d) for d in doc["dates"]))
    start = dt.date.fromisoformat(doc["start_date"])
    end = dt.date.fromisoformat(doc["end_date"])
    days = parse_weekdays(doc.get("days_of_week", range(7)))
    out = []
    d = start
    while d <= end:
        if d.weekday() in days:
            out.append(d)
        d += dt.timedelta(days=1)
    return tuple(out)


def _event_from_doc(e):
    return CongestionEvent(
        onset_s=float(e["onset_s"]),
        origin_m=float(e["origin_m"]),
        duration_s=float(e["duration_s"]),
        speed_drop_kmh=float(e["speed_drop_kmh"]),
        propagation_kmh=float(e.get("propagation_kmh", -15.0)),
        extent_m=None if e.get("extent_m") is None else float(e["extent_m"]),
        onset_jitter_s=float(e.get("onset_jitter_s", 0.0)),
        onset_offsets_s={str(k): float(v) for k, v in e.get("onset_offsets_s", {}).items()},
    )


def load_scenario(path) -> ScenarioSpec:
    if not os.path.exists(path):
        raise FileNotFoundError(f"scenario file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return ScenarioSpec.from_dict(json.load(fh))


def _onsets(scenario: ScenarioSpec, rng: np.random.Generator) -> dict[dt.date, list[float]]:
    out = {}
    for d in scenario.dates:
        row = []
        for ev in scenario.events:
            jitter = rng.uniform(-ev.onset_jitter_s, ev.onset_jitter_s) if ev.onset_jitter_s else 0.0
            row.append(ev.onset_s + ev.onset_offsets_s.get(d.isoformat(), jitter))
        out[d] = row
    return out


def true_median_speed(scenario: ScenarioSpec, onsets: Sequence[float], x, t) -> np.ndarray:
    """Noise-free median speed (km/h) at positions/times for given event onsets."""
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    drop = np.zeros(x.shape)
    for ev, onset in zip(scenario.events, onsets):
        inside = band_contains(ev, onset, x, t)
        drop = np.where(inside, np.maximum(drop, ev.speed_drop_kmh), drop)
    return np.maximum(scenario.free_flow_kmh - drop, MIN_SPEED_KMH)


def _empirical(values: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(np.percentile(values, PERCENTILES * 100.0))


def generate_synthetic(scenario: ScenarioSpec, seed: int = 0) -> Dataset:
    """Link and route records at native 5-minute resolution for every scenario date.

    Every record is built from individual simulated vehicles: ``sample_size``
    speeds drawn lognormally around the cell's median, reported as empirical
    percentiles (so sparse cells come out narrow, as real probe data does).
    Route records come from vehicles whose relative speed is the same on every
    link. Deterministic in ``(scenario, seed)``; unobserved links get no records.
    """
    rng = np.random.default_rng(seed)
    route = scenario.route
    onsets = _onsets(scenario, rng)
    starts = np.arange(scenario.tod_range[0], scenario.tod_range[1], NATIVE_TOD_S)
    mids = starts + NATIVE_TOD_S / 2.0
    lengths = route.lengths
    limit_tt = lengths * 3.6 / route.speed_limits
    pos = np.array([lk.midpoint_position for lk in route.links])
    observed = np.array([lk.id not in scenario.unobserved_links for lk in route.links])

    link_recs, route_recs = [], []
    for d in scenario.dates:
        # grids are (links, intervals)
        base = true_median_speed(scenario, onsets[d], pos[:, None], mids[None, :])
        congested = base < scenario.free_flow_kmh
        noise = 1.0 + scenario.median_noise * rng.standard_normal(base.shape)
        median = np.maximum(base * noise, MIN_SPEED_KMH)
        spread = np.where(congested, scenario.congested_spread, scenario.free_spread)
        spread = spread * rng.uniform(0.8, 1.2, size=base.shape)
        sizes = np.maximum(rng.poisson(scenario.mean_sample_size, size=base.shape), 1)
        flags = rng.random(base.shape) < scenario.full_traversal_fraction
        rsizes = np.maximum(rng.poisson(scenario.route_mean_sample_size, size=starts.size), 1)
        rflags = rng.random(starts.size) < scenario.full_traversal_fraction

        for j, s in enumerate(starts):
            tod = TodInterval(int(s), int(s) + NATIVE_TOD_S)
            for i, lk in enumerate(route.links):
                if not observed[i]:
                    continue
                vehicles = median[i, j] * np.exp(spread[i, j] * rng.standard_normal(sizes[i, j]))
                speeds = np.round(np.maximum(_empirical(vehicles), 1.0), 3)
                tts = np.round(lk.length * 3.6 / speeds[::-1], 3)
                link_recs.append(LinkRecord(
                    link_id=lk.id,
                    date=d,
                    tod=tod,
                    sample_size=int(sizes[i, j]),
                    speed_percentiles=PercentileDistribution(speeds),
                    travel_time_percentiles=PercentileDistribution(tts),
                    speed_limit=lk.speed_limit,
                    full_traversal=bool(flags[i, j]),
                ))
            # snapshot of the interval: every link at its state during [s, s+5min)
            z = rng.standard_normal(rsizes[j])
            per_link = lengths[:, None] * 3.6 / (median[:, j, None] * np.exp(spread[:, j, None] * z))
            per_link = np.where(observed[:, None], per_link, limit_tt[:, None])
            route_tt = np.round(_empirical(per_link.sum(axis=0)), 3)
            route_recs.append(RouteRecord(
                route_id=route.id,
                date=d,
                tod=tod,
                sample_size=int(rsizes[j]),
                travel_time_percentiles=PercentileDistribution(route_tt),
                full_traversal=bool(rflags[j]),
            ))
    return Dataset(tuple(link_recs), tuple(route_recs), {route.id: route})


def scenario_onsets(scenario: ScenarioSpec, seed: int = 0) -> dict[dt.date, list[float]]:
    """Per-date event onsets that ``generate_synthetic(scenario, seed)`` realizes."""
    return _onsets(scenario, np.random.default_rng(seed))

"""In-memory dataset, JSON-lines persistence and the query filter."""
from __future__ import annotations

import datetime as dt
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Union

from ..core import PercentileDistribution
from .schema import FcdQuery, LinkRecord, Route, RouteRecord, SchemaError, TodInterval

__all__ = [
    "Dataset",
    "DatasetParseError",
    "load_dataset",
    "load_geometry",
    "save_dataset",
    "save_geometry",
    "dumps_records",
    "dumps_geometry",
    "query",
]

PathLike = Union[str, os.PathLike]


class DatasetParseError(ValueError):
    """A dataset or geometry file could not be parsed; carries its location."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class Dataset:
    """Immutable record store keyed by ``(id, date, tod_start)``."""

    link_records: tuple[LinkRecord, ...] = ()
    route_records: tuple[RouteRecord, ...] = ()
    routes: Mapping[str, Route] = field(default_factory=dict)

    def __post_init__(self):
        order = _link_order(self.routes)
        links = tuple(sorted(self.link_records, key=lambda r: _sort_key(r, order)))
        rroutes = tuple(sorted(self.route_records, key=lambda r: _sort_key(r, order)))
        object.__setattr__(self, "link_records", links)
        object.__setattr__(self, "route_records", rroutes)
        object.__setattr__(self, "routes", dict(self.routes))
        link_index = {}
        for rec in links:
            if rec.key in link_index:
                raise SchemaError(f"duplicate link record {rec.key}")
            link_index[rec.key] = rec
        route_index = {}
        for rec in rroutes:
            if rec.key in route_index:
                raise SchemaError(f"duplicate route record {rec.key}")
            route_index[rec.key] = rec
        object.__setattr__(self, "_link_index", link_index)
        object.__setattr__(self, "_route_index", route_index)
        by_link: dict[str, list[LinkRecord]] = {}
        for rec in links:
            by_link.setdefault(rec.link_id, []).append(rec)
        object.__setattr__(self, "_by_link", by_link)

    def __len__(self):
        return len(self.link_records) + len(self.route_records)

    @property
    def link_ids(self) -> list[str]:
        return sorted(self._by_link)

    @property
    def dates(self) -> list[dt.date]:
        return sorted({r.date for r in self.link_records} | {r.date for r in self.route_records})

    def get(self, link_id: str, date: dt.date, tod_start: int) -> Optional[LinkRecord]:
        return self._link_index.get((link_id, date, int(tod_start)))

    def get_route_record(self, route_id: str, date: dt.date, tod_start: int) -> Optional[RouteRecord]:
        return self._route_index.get((route_id, date, int(tod_start)))

    def records_for_link(self, link_id: str, dates: Optional[Iterable[dt.date]] = None) -> list[LinkRecord]:
        recs = self._by_link.get(link_id, [])
        if dates is None:
            return list(recs)
        wanted = set(dates)
        return [r for r in recs if r.date in wanted]

    def records_for_route(self, route_id: str, dates: Optional[Iterable[dt.date]] = None) -> list[RouteRecord]:
        wanted = None if dates is None else set(dates)
        return [r for r in self.route_records
                if r.route_id == route_id and (wanted is None or r.date in wanted)]

    def route(self, route_id: str) -> Route:
        try:
            return self.routes[route_id]
        except KeyError:
            raise KeyError(f"unknown route {route_id!r}") from None

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.link_records == other.link_records
                and self.route_records == other.route_records
                and self.routes == other.routes)

    __hash__ = None


def _link_order(routes: Mapping[str, Route]) -> dict[str, int]:
    order = {}
    for rid in sorted(routes):
        for lk in routes[rid].links:
            order.setdefault(lk.id, lk.index_on_route)
    return order


def _sort_key(rec, order):
    if isinstance(rec, RouteRecord):
        return (rec.date, rec.tod.start, 0, rec.route_id)
    return (rec.date, rec.tod.start, order.get(rec.link_id, 1 << 30), rec.link_id)


def query(dataset: Dataset, q: FcdQuery) -> list:
    """Records matching ``q``, ordered by date, TOD start, then link index."""
    pool = dataset.route_records if q.target == "route" else dataset.link_records
    # records are stored pre-sorted, so a filter keeps the required order
    return [r for r in pool if q.matches(r)]


# -- file format ------------------------------------------------------------

def _link_to_json(r: LinkRecord) -> dict:
    return {
        "record_kind": "link",
        "link_id": r.link_id,
        "date": r.date.isoformat(),
        "tod_start_s": r.tod.start,
        "tod_end_s": r.tod.end,
        "sample_size": r.sample_size,
        "full_traversal": r.full_traversal,
        "speed_limit_kmh": r.speed_limit,
        "speed_percentiles_kmh": None if r.speed_percentiles is None else r.speed_percentiles.tolist(),
        "travel_time_percentiles_s": None if r.travel_time_percentiles is None
        else r.travel_time_percentiles.tolist(),
    }


def _route_to_json(r: RouteRecord) -> dict:
    return {
        "record_kind": "route",
        "route_id": r.route_id,
        "date": r.date.isoformat(),
        "tod_start_s": r.tod.start,
        "tod_end_s": r.tod.end,
        "sample_size": r.sample_size,
        "full_traversal": r.full_traversal,
        "speed_limit_kmh": None,
        "speed_percentiles_kmh": None,
        "travel_time_percentiles_s": None if r.travel_time_percentiles is None
        else r.travel_time_percentiles.tolist(),
    }


def _pct(obj, name):
    vals = obj.get(name)
    return None if vals is None else PercentileDistribution(vals)


def _record_from_json(obj: dict):
    kind = obj.get("record_kind")
    date = dt.date.fromisoformat(obj["date"])
    tod = TodInterval(int(obj["tod_start_s"]), int(obj["tod_end_s"]))
    size = int(obj["sample_size"])
    full = bool(obj.get("full_traversal", False))
    if kind == "link":
        return LinkRecord(
            link_id=str(obj["link_id"]),
            date=date,
            tod=tod,
            sample_size=size,
            speed_percentiles=_pct(obj, "speed_percentiles_kmh"),
            travel_time_percentiles=_pct(obj, "travel_time_percentiles_s"),
            speed_limit=float(obj["speed_limit_kmh"]),
            full_traversal=full,
        )
    if kind == "route":
        return RouteRecord(
            route_id=str(obj["route_id"]),
            date=date,
            tod=tod,
            sample_size=size,
            travel_time_percentiles=_pct(obj, "travel_time_percentiles_s"),
            full_traversal=full,
        )
    raise SchemaError(f"unknown record_kind {kind!r}")


def dumps_records(dataset: Dataset) -> str:
    lines = [json.dumps(_link_to_json(r)) for r in dataset.link_records]
    lines += [json.dumps(_route_to_json(r)) for r in dataset.route_records]
    return "".join(line + "\n" for line in lines)


def dumps_geometry(routes: Mapping[str, Route]) -> str:
    doc = {
        "routes": [
            {
                "route_id": rid,
                "links": [
                    {"link_id": lk.id, "length_m": lk.length, "speed_limit_kmh": lk.speed_limit}
                    for lk in routes[rid].links
                ],
            }
            for rid in sorted(routes)
        ]
    }
    return json.dumps(doc, indent=2) + "\n"


def save_dataset(dataset: Dataset, path: PathLike, geometry_path: Optional[PathLike] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_records(dataset))
    if geometry_path is not None:
        save_geometry(dataset.routes, geometry_path)


def save_geometry(routes: Mapping[str, Route], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_geometry(routes))


def load_geometry(path: PathLike) -> dict[str, Route]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(path, exc.lineno, exc.msg) from exc
    routes = {}
    try:
        for i, entry in enumerate(doc["routes"]):
            segs = [(lk["link_id"], lk["length_m"], lk["speed_limit_kmh"]) for lk in entry["links"]]
            route = Route.from_segments(entry["route_id"], segs)
            if route.id in routes:
                raise SchemaError(f"duplicate route id {route.id!r}")
            routes[route.id] = route
    except (KeyError, TypeError, SchemaError) as exc:
        raise DatasetParseError(path, None, f"route entry {i}: {exc}") from exc
    return routes


def load_dataset(path: PathLike, geometry: Union[None, PathLike, Mapping[str, Route]] = None) -> Dataset:
    """Read a JSON-lines record file (and optionally the route geometry).

    With geometry available, each link record is also checked against its
    link's length and speed limit.
    """
    if geometry is None:
        routes = {}
    elif isinstance(geometry, Mapping):
        routes = dict(geometry)
    else:
        routes = load_geometry(geometry)

    lengths = {lk.id: lk.length for r in routes.values() for lk in r.links}
    link_recs, route_recs = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(path, lineno, exc.msg) from exc
            try:
                rec = _record_from_json(obj)
                if isinstance(rec, LinkRecord):
                    if rec.link_id in lengths:
                        rec.check_length(lengths[rec.link_id])
                    link_recs.append(rec)
                else:
                    route_recs.append(rec)
            except (KeyError, TypeError, ValueError) as exc:
                # DistributionError and SchemaError are ValueErrors
                msg = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
                raise DatasetParseError(path, lineno, msg) from exc
    try:
        return Dataset(tuple(link_recs), tuple(route_recs), routes)
    except SchemaError as exc:
        raise DatasetParseError(path, None, str(exc)) from exc

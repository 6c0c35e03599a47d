"""Link travel-time matrix and Monte Carlo route travel-time estimation.

Short TOD intervals are handled link by link: a virtual vehicle samples a
speed on each link from the cell of the interval it enters the link in.
Dependence between consecutive links is controlled by ``alpha``: the speed
on link ``i`` is drawn from the quantile window ``[q - alpha, q + alpha]``
of link ``i``'s distribution, where ``q`` is the quantile the previous speed
occupies there. ``alpha = 1`` is fully independent sampling.

Long (demand-based) intervals are handled route-wide by sampling the pooled
route travel-time distribution directly.
"""
from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .core import (
    PERCENTILES,
    PiecewiseCdf,
    SampleSummary,
    build_cdf,
    pool_percentiles,
    quantile_of,
    sample,
    summarize,
    truncated_sample,
)
from .ingestion import DAY_S, Dataset, Route, RouteRecord, TodScheme

__all__ = [
    "FreeFlowFallback",
    "TravelTimeMatrix",
    "SimulationConfig",
    "TripResult",
    "Estimate",
    "ShortIntervalWarning",
    "InsufficientDataError",
    "build_matrix",
    "simulate_trip",
    "estimate_distribution",
    "aggregate_route_records",
    "route_based_estimate",
    "estimate_travel_time",
    "TripTimeEstimator",
    "write_estimation_report",
    "ESTIMATION_COLUMNS",
]

_RUN_BLOCK = 256


class ShortIntervalWarning(UserWarning):
    """Route-based sampling over an interval shorter than the trip is biased."""


class InsufficientDataError(LookupError):
    pass


@dataclass(frozen=True)
class FreeFlowFallback:
    """Cell with no FCD: the link is assumed free at its speed limit."""

    speed_limit: float

    @property
    def support(self) -> tuple[float, float]:
        return self.speed_limit, self.speed_limit

    @property
    def is_degenerate(self) -> bool:
        return True

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        out = np.full(u.shape, float(self.speed_limit))
        return float(out) if out.ndim == 0 else out

    def cdf(self, value):
        v = np.asarray(value, dtype=float)
        out = np.where(v < self.speed_limit, 0.0, np.where(v > self.speed_limit, 1.0, 0.5))
        return float(out) if out.ndim == 0 else out

    def mean(self) -> float:
        return float(self.speed_limit)


Cell = Union[PiecewiseCdf, FreeFlowFallback]


@dataclass(frozen=True, eq=False)
class TravelTimeMatrix:
    """Per (link, TOD interval) speed distributions for one route."""

    route: Route
    scheme: TodScheme
    cells: tuple[tuple[Cell, ...], ...]     # [link][interval]
    sample_sizes: np.ndarray                # pooled FCD sample size per cell

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.cells), len(self.scheme)

    def cell(self, link_index: int, interval_index: int) -> Cell:
        return self.cells[link_index][interval_index]

    def is_fallback(self) -> np.ndarray:
        return np.array([[isinstance(c, FreeFlowFallback) for c in row] for row in self.cells])

    def fcd_sample_size(self, departure_time: float) -> int:
        j = self.scheme.index_of(departure_time)
        return int(round(float(np.median(self.sample_sizes[:, j]))))


def build_matrix(dataset: Dataset, route: Union[Route, str], scheme: TodScheme,
                 dates: Sequence, *, pool_draws: int = 1000) -> TravelTimeMatrix:
    """Pool native records of ``dates`` into one speed CDF per (link, interval).

    Cells without any observed record fall back to the link's speed limit.
    """
    if isinstance(route, str):
        route = dataset.route(route)
    if len(scheme) == 0:
        raise ValueError("TOD scheme has no intervals")
    dates = list(dates)
    if not dates:
        raise ValueError("at least one date is required")
    if dataset.routes:
        known = {lk.id for r in dataset.routes.values() for lk in r.links}
        missing = [lk.id for lk in route.links if lk.id not in known]
        if missing:
            raise KeyError(f"route {route.id} has links unknown to the dataset geometry: {missing}")

    n_int = len(scheme)
    cells = []
    sizes = np.zeros((len(route), n_int), dtype=int)
    for i, lk in enumerate(route.links):
        groups: dict[int, list] = {}
        for rec in dataset.records_for_link(lk.id, dates):
            if rec.sample_size > 0:
                groups.setdefault(scheme.index_for(rec.tod), []).append(rec)
        row = []
        for j in range(n_int):
            recs = groups.get(j)
            if not recs:
                row.append(FreeFlowFallback(lk.speed_limit))
                continue
            sizes[i, j] = sum(r.sample_size for r in recs)
            pooled = pool_percentiles([r.speed_percentiles for r in recs],
                                      [r.sample_size for r in recs], pool_draws)
            row.append(build_cdf(pooled))
        cells.append(tuple(row))
    return TravelTimeMatrix(route, scheme, tuple(cells), sizes)


@dataclass(frozen=True)
class SimulationConfig:
    alpha: float = 1.0
    n_runs: int = 500
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if int(self.n_runs) != self.n_runs or self.n_runs < 1:
            raise ValueError(f"n_runs must be a positive integer, got {self.n_runs}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError(f"seed must be a non-negative integer, got {self.seed}")


@dataclass(frozen=True, eq=False)
class TripResult:
    departure_time: float
    travel_time: float
    entry_times: np.ndarray
    speeds: np.ndarray
    link_times: np.ndarray

    @property
    def trace(self) -> list[tuple[float, float]]:
        return list(zip(self.entry_times.tolist(), self.speeds.tolist()))


def _run_uniforms(seed: int, runs: Iterable[int], n_links: int) -> np.ndarray:
    # one independent substream per run keeps results order-free
    return np.stack([np.random.default_rng([seed, int(r)]).random(n_links) for r in runs])


def _simulate_block(matrix: TravelTimeMatrix, departure_time: float, alpha: float, U: np.ndarray):
    n, n_links = U.shape
    lengths = matrix.route.lengths
    acc = np.zeros(n)
    entry = np.empty((n, n_links))
    speeds = np.empty((n, n_links))
    ltimes = np.empty((n, n_links))
    prev = None
    for i in range(n_links):
        e = departure_time + acc
        entry[:, i] = e
        j = matrix.scheme.index_of(e)
        v = np.empty(n)
        for jj in np.unique(j):
            mask = j == jj
            cell = matrix.cells[i][jj]
            if prev is None:
                v[mask] = sample(cell, U[mask, i])
            else:
                q = quantile_of(cell, prev[mask])
                lo = np.maximum(q - alpha, 0.0)
                hi = np.minimum(q + alpha, 1.0)
                v[mask] = truncated_sample(cell, lo, hi, U[mask, i])
        lt = lengths[i] * 3.6 / v
        ltimes[:, i] = lt
        speeds[:, i] = v
        acc = acc + lt
        prev = v
    return acc, entry, speeds, ltimes


def _check_departure(t: float) -> None:
    if not 0 <= t < DAY_S:
        raise ValueError(f"departure time must lie in [0, {DAY_S}), got {t}")


def simulate_trip(matrix: TravelTimeMatrix, departure_time: float, config: SimulationConfig,
                  run_index: int) -> TripResult:
    """One virtual trip; deterministic in ``(config.seed, run_index)``."""
    _check_departure(departure_time)
    if not 0 <= run_index < config.n_runs:
        raise ValueError(f"run_index must lie in [0, {config.n_runs})")
    U = _run_uniforms(config.seed, [run_index], len(matrix.route))
    acc, entry, speeds, ltimes = _simulate_block(matrix, float(departure_time), config.alpha, U)
    return TripResult(float(departure_time), float(acc[0]), entry[0], speeds[0], ltimes[0])


@dataclass(frozen=True, eq=False)
class Estimate:
    """Travel-time distribution for one departure: summary plus sorted raw samples."""

    departure_time: float
    scheme: str
    alpha: float
    summary: SampleSummary
    samples: np.ndarray
    fcd_sample_size: int = 0


def _simulate_all(matrix, departure_time, config, n_jobs):
    blocks = [range(s, min(s + _RUN_BLOCK, config.n_runs)) for s in range(0, config.n_runs, _RUN_BLOCK)]

    def work(runs):
        U = _run_uniforms(config.seed, runs, len(matrix.route))
        return _simulate_block(matrix, float(departure_time), config.alpha, U)[0]

    if n_jobs is not None and n_jobs != 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=None if n_jobs < 0 else n_jobs) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    return np.concatenate(parts)


def estimate_distribution(matrix: TravelTimeMatrix, departure_time: float, config: SimulationConfig,
                          *, n_jobs: Optional[int] = None) -> Estimate:
    """Run ``config.n_runs`` trips and summarize their travel times."""
    _check_departure(departure_time)
    times = np.sort(_simulate_all(matrix, departure_time, config, n_jobs))
    return Estimate(
        departure_time=float(departure_time),
        scheme=matrix.scheme.name,
        alpha=config.alpha,
        summary=summarize(times),
        samples=times,
        fcd_sample_size=matrix.fcd_sample_size(departure_time),
    )


def aggregate_route_records(records: Iterable[RouteRecord], scheme: TodScheme,
                            *, pool_draws: int = 1000) -> list[RouteRecord]:
    """Pool native route records into ``scheme``'s intervals, per route and date."""
    groups: dict[tuple, list[RouteRecord]] = {}
    for rec in records:
        if rec.sample_size > 0:
            groups.setdefault((rec.route_id, rec.date, scheme.index_for(rec.tod)), []).append(rec)
    out = []
    for (rid, date, j), recs in sorted(groups.items()):
        pooled = pool_percentiles([r.travel_time_percentiles for r in recs],
                                  [r.sample_size for r in recs], pool_draws)
        out.append(RouteRecord(
            route_id=rid,
            date=date,
            tod=scheme.intervals[j],
            sample_size=sum(r.sample_size for r in recs),
            travel_time_percentiles=pooled,
            full_traversal=all(r.full_traversal for r in recs),
        ))
    return out


def _route_samples(route_records, departure_time, n_draws, seed, free_flow_time):
    t = float(departure_time) % DAY_S
    matching = [r for r in route_records if r.sample_size > 0 and r.tod.contains(t)]
    if not matching:
        raise InsufficientDataError(f"no route record covers departure time {departure_time}")
    if free_flow_time is None:
        free_flow_time = min(r.travel_time_percentiles.values[0] for r in matching)
    shortest = min(r.tod.width for r in matching)
    if shortest < free_flow_time:
        warnings.warn(
            f"route-based sampling over a {shortest} s interval for a ~{free_flow_time:.0f} s trip "
            "overstates congestion; use link-based estimation for short intervals",
            ShortIntervalWarning,
            stacklevel=3,
        )
    pooled = pool_percentiles([r.travel_time_percentiles for r in matching],
                              [r.sample_size for r in matching])
    u = np.random.default_rng(seed).random(int(n_draws))
    draws = np.sort(sample(build_cdf(pooled), u))
    return draws, sum(r.sample_size for r in matching)


def route_based_estimate(route_records: Sequence[RouteRecord], departure_time: float, n_draws: int,
                         seed: int, *, free_flow_time: Optional[float] = None,
                         return_samples: bool = False):
    """Sample the route travel-time distribution of the interval holding the departure.

    Meant for long (demand-based) intervals. When the interval is shorter
    than the free-flow trip time a :class:`ShortIntervalWarning` is issued.
    ``free_flow_time`` defaults to the fastest (p5) recorded travel time.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be positive")
    draws, _ = _route_samples(route_records, departure_time, n_draws, seed, free_flow_time)
    summary = summarize(draws)
    return (summary, draws) if return_samples else summary


def estimate_travel_time(dataset: Dataset, route: Union[Route, str], dates: Sequence,
                         departure_time: float, scheme: TodScheme, config: SimulationConfig,
                         *, n_jobs: Optional[int] = None) -> Estimate:
    """Scheme-aware estimate: link-based for fixed schemes, route-based for demand-based."""
    if isinstance(route, str):
        route = dataset.route(route)
    if scheme.is_route_based:
        _check_departure(departure_time)
        recs = aggregate_route_records(dataset.records_for_route(route.id, dates), scheme)
        draws, size = _route_samples(recs, departure_time, config.n_runs, config.seed,
                                     route.free_flow_time())
        return Estimate(float(departure_time), scheme.name, config.alpha, summarize(draws), draws, size)
    matrix = build_matrix(dataset, route, scheme, dates)
    return estimate_distribution(matrix, departure_time, config, n_jobs=n_jobs)


class TripTimeEstimator(BaseEstimator):
    """Scikit-learn style wrapper: ``fit`` on FCD records, ``predict`` mean travel times.

    ``predict`` takes departure times in seconds since midnight.
    """

    def __init__(self, scheme="5min", alpha=1.0, n_runs=500, seed=0, n_jobs=None):
        self.scheme = scheme
        self.alpha = alpha
        self.n_runs = n_runs
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, dataset: Dataset, route=None, dates=None):
        if route is None:
            if len(dataset.routes) != 1:
                raise ValueError("route is required when the dataset holds several routes")
            route = next(iter(dataset.routes.values()))
        elif isinstance(route, str):
            route = dataset.route(route)
        self.scheme_ = TodScheme.from_name(self.scheme)
        self.config_ = SimulationConfig(self.alpha, self.n_runs, self.seed)
        self.dates_ = list(dataset.dates if dates is None else dates)
        self.route_ = route
        if self.scheme_.is_route_based:
            self.route_records_ = aggregate_route_records(
                dataset.records_for_route(route.id, self.dates_), self.scheme_)
        else:
            self.matrix_ = build_matrix(dataset, route, self.scheme_, self.dates_)
        return self

    def _estimate(self, t: float) -> Estimate:
        if self.scheme_.is_route_based:
            _check_departure(t)
            draws, size = _route_samples(self.route_records_, t, self.config_.n_runs,
                                         self.config_.seed, self.route_.free_flow_time())
            return Estimate(t, self.scheme_.name, self.config_.alpha, summarize(draws), draws, size)
        return estimate_distribution(self.matrix_, t, self.config_, n_jobs=self.n_jobs)

    def predict_estimates(self, departure_times) -> list[Estimate]:
        check_is_fitted(self, "config_")
        t = check_array(departure_times, ensure_2d=False, dtype=float).reshape(-1)
        return [self._estimate(float(x)) for x in t]

    def predict(self, departure_times) -> np.ndarray:
        return np.array([e.summary.mean for e in self.predict_estimates(departure_times)])

    def predict_std(self, departure_times) -> np.ndarray:
        return np.array([e.summary.std for e in self.predict_estimates(departure_times)])


ESTIMATION_COLUMNS = ["departure_time_s", "scheme", "alpha", "mean_tt_s", "std_tt_s"] + [
    f"p{int(round(p * 100)):02d}" for p in PERCENTILES
]


def write_estimation_report(estimates: Sequence[Estimate], fh, header: Optional[dict] = None) -> None:
    """Tabular estimation report: one row per departure time."""
    for key, val in (header or {}).items():
        fh.write(f"# {key}: {val}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(ESTIMATION_COLUMNS)
    for e in estimates:
        s = e.summary
        writer.writerow([f"{e.departure_time:.0f}", e.scheme, f"{e.alpha:g}", f"{s.mean:.3f}",
                         f"{s.std:.3f}"] + [f"{v:.3f}" for v in s.percentiles.values])

"""Historical-day selection, pooled forecasts and forecast-vs-reference checks."""
from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .core import SampleSummary, summarize
from .estimation import InsufficientDataError, SimulationConfig, estimate_travel_time
from .ingestion import Dataset, Route, TodScheme

__all__ = [
    "STRATEGY_WEEKS",
    "HistoryStrategy",
    "InsufficientHistoryError",
    "Forecast",
    "ComparisonReport",
    "ReportRow",
    "select_historical_days",
    "forecast",
    "reference_estimate",
    "compare",
    "report_row",
    "write_forecast_report",
    "FORECAST_COLUMNS",
]

STRATEGY_WEEKS = {"prev-week": 1, "prev-month": 4, "prev-3-months": 12}


class InsufficientHistoryError(InsufficientDataError):
    def __init__(self, message, found=()):
        self.found = list(found)
        super().__init__(message)


@dataclass(frozen=True)
class HistoryStrategy:
    """Which past days feed a forecast.

    Named kinds look back 1, 4 or 12 weeks; with ``weekday_lock`` only the
    target's weekday is used (so 1, 4 or 12 days). ``custom`` uses ``dates``
    verbatim.
    """

    kind: str = "prev-month"
    weekday_lock: bool = True
    exclusions: frozenset = frozenset()
    dates: tuple = ()

    def __post_init__(self):
        if self.kind != "custom" and self.kind not in STRATEGY_WEEKS:
            raise ValueError(f"unknown history strategy {self.kind!r}")
        if self.kind == "custom" and not self.dates:
            raise ValueError("custom strategy needs explicit dates")
        object.__setattr__(self, "exclusions", frozenset(self.exclusions))
        object.__setattr__(self, "dates", tuple(self.dates))

    @classmethod
    def custom(cls, dates: Iterable[dt.date], **kw) -> "HistoryStrategy":
        return cls(kind="custom", dates=tuple(dates), **kw)


def select_historical_days(target_date: dt.date, strategy: HistoryStrategy,
                           available_dates: Iterable[dt.date]) -> list[dt.date]:
    """Most recent usable dates before ``target_date``, newest first."""
    available = set(available_dates)
    if not available:
        raise InsufficientHistoryError("no dates available")
    if strategy.kind == "custom":
        picked = sorted((d for d in set(strategy.dates)
                         if d in available and d not in strategy.exclusions), reverse=True)
        if not picked:
            raise InsufficientHistoryError(
                f"none of the custom dates are available: {sorted(strategy.dates)}", strategy.dates)
        return picked

    weeks = STRATEGY_WEEKS[strategy.kind]
    if strategy.weekday_lock:
        window = [target_date - dt.timedelta(days=7 * k) for k in range(1, weeks + 1)]
    else:
        window = [target_date - dt.timedelta(days=k) for k in range(1, 7 * weeks + 1)]
    picked = [d for d in window if d in available and d not in strategy.exclusions]
    if not picked:
        found = sorted((d for d in window if d in available), reverse=True)
        raise InsufficientHistoryError(
            f"no usable history for {target_date} with {strategy.kind}: "
            f"available in window {[d.isoformat() for d in found]}, "
            f"excluded {sorted(d.isoformat() for d in strategy.exclusions)}",
            found,
        )
    return picked


@dataclass(frozen=True, eq=False)
class Forecast:
    target_date: dt.date
    departure_time: float
    strategy: HistoryStrategy
    scheme: str
    alpha: float
    days: tuple
    samples: np.ndarray
    summary: SampleSummary
    per_day: tuple = field(repr=False, default=())
    fcd_sample_size: int = 0


def _resolve(dataset: Dataset, route) -> Route:
    return dataset.route(route) if isinstance(route, str) else route


def forecast(dataset: Dataset, route: Union[Route, str], target: tuple, strategy: HistoryStrategy,
             scheme: TodScheme, config: SimulationConfig, *, n_jobs: Optional[int] = None) -> Forecast:
    """Pool per-day travel-time samples over the selected historical days.

    ``target`` is ``(date, departure_seconds)``. Each day is estimated with
    the same config; the raw samples are merged before summarizing so that
    day-to-day differences stay visible as spread.
    """
    date, departure = target
    route = _resolve(dataset, route)
    days = select_historical_days(date, strategy, dataset.dates)
    per_day = [estimate_travel_time(dataset, route, [d], departure, scheme, config, n_jobs=n_jobs)
               for d in days]
    pooled = np.sort(np.concatenate([e.samples for e in per_day]))
    return Forecast(
        target_date=date,
        departure_time=float(departure),
        strategy=strategy,
        scheme=scheme.name,
        alpha=config.alpha,
        days=tuple(days),
        samples=pooled,
        summary=summarize(pooled),
        per_day=tuple(per_day),
        fcd_sample_size=sum(e.fcd_sample_size for e in per_day),
    )


def reference_estimate(dataset: Dataset, route: Union[Route, str], target: tuple, scheme: TodScheme,
                       config: SimulationConfig, *, n_jobs: Optional[int] = None,
                       return_estimate: bool = False):
    """Estimate from the target day's own records (the ground-truth proxy)."""
    date, departure = target
    if date not in set(dataset.dates):
        raise InsufficientDataError(f"target date {date} is not in the dataset")
    est = estimate_travel_time(dataset, _resolve(dataset, route), [date], departure, scheme, config,
                               n_jobs=n_jobs)
    return est if return_estimate else est.summary


@dataclass(frozen=True)
class ComparisonReport:
    reference: SampleSummary
    forecast: SampleSummary
    mean_error: float   # forecast mean - reference mean
    z_score: float
    overlap: bool
    k: float = 1.0


def _summary(obj) -> SampleSummary:
    return obj if isinstance(obj, SampleSummary) else obj.summary


def compare(reference, forecast, k: float = 1.0) -> ComparisonReport:
    """Distance of the reference mean from the forecast, in forecast std units."""
    ref, fc = _summary(reference), _summary(forecast)
    err = fc.mean - ref.mean
    if fc.std > 0:
        z = abs(err) / fc.std
    else:
        z = 0.0 if err == 0 else math.inf
    overlap = abs(err) <= k * fc.std
    return ComparisonReport(ref, fc, err, z, bool(overlap), k)


@dataclass(frozen=True)
class ReportRow:
    strategy: str        # "reference" or a strategy kind
    range_days: int
    scheme: str          # 5min | 20min | demand5
    mean_tt_min: float
    std_tt_min: float
    sample_size: int
    comparison: Optional[ComparisonReport] = None


def report_row(strategy: str, range_days: int, scheme: str, summary: SampleSummary,
               sample_size: int, comparison: Optional[ComparisonReport] = None) -> ReportRow:
    return ReportRow(strategy, range_days, scheme, summary.mean / 60.0, summary.std / 60.0,
                     int(sample_size), comparison)


FORECAST_COLUMNS = [
    "strategy", "range_days", "scheme", "mean_tt_min", "std_tt_min", "underlying_fcd_sample_size",
    "mean_error_min", "z_score", "overlap",
]


def _fmt_z(z: float) -> str:
    return "inf" if math.isinf(z) else f"{z:.2f}"


def write_forecast_report(rows: Sequence[ReportRow], fh, header: Optional[dict] = None) -> None:
    """Forecast table (one row per strategy x scheme) with comparison columns."""
    for key, val in (header or {}).items():
        fh.write(f"# {key}: {val}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(FORECAST_COLUMNS)
    for r in rows:
        c = r.comparison
        writer.writerow([
            r.strategy, r.range_days, r.scheme, f"{r.mean_tt_min:.2f}", f"{r.std_tt_min:.2f}",
            r.sample_size,
            "" if c is None else f"{c.mean_error / 60.0:.2f}",
            "" if c is None else _fmt_z(c.z_score),
            "" if c is None else str(c.overlap).lower(),
        ])

"""Command-line entry point: ``fcdtt {synth,field,estimate,forecast}``.

Every subcommand writes machine-readable text (``#`` header lines followed by
CSV) to ``--out`` or stdout. Exit codes: 0 success, 1 usage, 2 input/parse,
3 insufficient data, 4 internal error.
"""
from __future__ import annotations

import argparse
import contextlib
import datetime as dt
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np

from .core import N_PERCENTILES, DistributionError
from .estimation import (
    InsufficientDataError,
    SimulationConfig,
    estimate_travel_time,
    write_estimation_report,
)
from .ingestion import (
    DAY_S,
    Dataset,
    DatasetParseError,
    SchemaError,
    TodScheme,
    generate_synthetic,
    load_dataset,
    load_scenario,
    save_dataset,
)
from .prediction import (
    STRATEGY_WEEKS,
    HistoryStrategy,
    compare,
    forecast,
    reference_estimate,
    report_row,
    write_forecast_report,
)
from .speedfield import AsmParams, GridTooLargeError, measurements_from_records, reconstruct_grid, write_grid

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_USAGE", "EXIT_INPUT", "EXIT_DATA", "EXIT_INTERNAL"]

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3, 4

SCHEMES = ("5min", "20min", "demand5")
STRATEGIES = tuple(STRATEGY_WEEKS) + ("custom",)
RECORDS_FILE = "records.jsonl"
GEOMETRY_FILE = "geometry.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default; 2 is reserved for bad input files here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error (usage): {message}\n")


# -- parsing helpers ----------------------------------------------------------

def parse_clock(text: str) -> int:
    """``HH:MM`` (``24:00`` allowed) to seconds since midnight."""
    try:
        hh, mm = str(text).split(":")
        h, m = int(hh), int(mm)
    except ValueError:
        raise UsageError(f"invalid time {text!r}, expected HH:MM") from None
    if not (0 <= m < 60 and 0 <= h <= 24) or (h == 24 and m):
        raise UsageError(f"invalid time {text!r}")
    return h * 3600 + m * 60


def parse_departures(text: str, step_min: float) -> list[int]:
    """Single ``HH:MM`` or an end-exclusive sweep ``HH:MM-HH:MM``."""
    if "-" not in str(text):
        t = parse_clock(text)
        if t >= DAY_S:
            raise UsageError("departure must be before 24:00")
        return [t]
    lo, hi = (parse_clock(p) for p in str(text).split("-", 1))
    if not step_min > 0:
        raise UsageError("--step must be positive")
    if not lo < hi:
        raise UsageError(f"empty departure range {text!r}")
    step = int(round(step_min * 60))
    return list(range(lo, hi, step))


def parse_dates(text) -> list[dt.date]:
    if text is None or text == "":
        return []
    items = text if isinstance(text, (list, tuple)) else str(text).split(",")
    try:
        return [dt.date.fromisoformat(str(s).strip()) for s in items if str(s).strip()]
    except ValueError as exc:
        raise UsageError(f"invalid date: {exc}") from None


def _one_date(text) -> dt.date:
    dates = parse_dates(text)
    if len(dates) != 1:
        raise UsageError(f"expected a single date, got {text!r}")
    return dates[0]


def _clock(t: float) -> str:
    t = int(t)
    return f"{t // 3600:02d}:{t % 3600 // 60:02d}"


# -- parser -------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON file supplying any flag (flags override it)")
    p.add_argument("--dataset", help="JSON-lines record file")
    p.add_argument("--geometry", help=f"route geometry JSON (default: {GEOMETRY_FILE} beside the dataset)")
    p.add_argument("--route", help="route id (default: the only route in the geometry)")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--n-jobs", type=int, default=None, help="worker threads; output does not depend on it")


def _sim(p):
    p.add_argument("--scheme", choices=SCHEMES, default="5min", help="TOD granularity")
    p.add_argument("--alpha", type=float, default=1.0, help="inter-link dependence window, in (0, 1]")
    p.add_argument("--runs", type=int, default=500, help="Monte Carlo runs per estimate")
    p.add_argument("--seed", type=int, default=0, help="random seed")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="fcdtt", description=__doc__.splitlines()[0], formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset", formatter_class=fmt)
    p.add_argument("--config", help="JSON file supplying any flag (flags override it)")
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", help=f"output directory for {RECORDS_FILE} and {GEOMETRY_FILE}")

    p = sub.add_parser("field", help="reconstruct an ASM speed field grid", formatter_class=fmt)
    _common(p)
    p.add_argument("--date", help="date (YYYY-MM-DD)")
    p.add_argument("--c-free", type=float, default=AsmParams.c_free, help="free-flow propagation speed, km/h")
    p.add_argument("--c-cong", type=float, default=AsmParams.c_cong, help="congested propagation speed, km/h")
    p.add_argument("--v-c", type=float, default=AsmParams.v_c, help="critical speed, km/h")
    p.add_argument("--delta-v", type=float, default=AsmParams.delta_v, help="transition width, km/h")
    p.add_argument("--dx", type=float, default=None, help="grid step in m (default: median link length)")
    p.add_argument("--dt", type=float, default=300.0, help="grid step in s")

    p = sub.add_parser("estimate", help="travel-time distributions for departure times", formatter_class=fmt)
    _common(p)
    p.add_argument("--date", help="date or comma-separated dates whose records are used")
    p.add_argument("--departure", help="HH:MM or an end-exclusive sweep HH:MM-HH:MM")
    p.add_argument("--step", type=float, default=20.0, help="sweep step in minutes")
    _sim(p)

    p = sub.add_parser("forecast", help="forecast from historical days and compare", formatter_class=fmt)
    _common(p)
    p.add_argument("--date", help="target date (YYYY-MM-DD)")
    p.add_argument("--departure", help="departure time HH:MM")
    _sim(p)
    p.add_argument("--strategy", choices=STRATEGIES, default="prev-month", help="historical-day strategy")
    p.add_argument("--all-strategies", action="store_true",
                   help="every named strategy x every scheme (Table 2 layout)")
    p.add_argument("--custom-dates", help="comma-separated dates for --strategy custom")
    p.add_argument("--exclude-dates", help="comma-separated dates to leave out of the history")
    p.add_argument("--weekday-lock", action=argparse.BooleanOptionalAction, default=True,
                   help="only use days with the target's weekday")
    p.add_argument("--reference-scheme", choices=SCHEMES, default="5min",
                   help="scheme of the target-day reference estimate")
    p.add_argument("--k", type=float, default=1.0, help="overlap threshold in forecast std units")
    parser._subs = sub.choices  # used to apply config-file defaults
    return parser


def _parse(parser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(args.config, exc.lineno, exc.msg) from exc
    if not isinstance(doc, dict):
        raise DatasetParseError(args.config, None, "config must be a JSON object")
    known = set(vars(args)) - {"command", "config"}
    conf = {}
    for key, val in doc.items():
        name = key.lstrip("-").replace("-", "_")
        if name not in known:
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        if isinstance(val, list):
            val = ",".join(str(v) for v in val)
        conf[name] = val
    parser._subs[args.command].set_defaults(**conf)
    return parser.parse_args(argv)


# -- shared plumbing ----------------------------------------------------------

def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) in (None, "")]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")


def _load(args) -> Dataset:
    _require(args, "dataset")
    if not os.path.exists(args.dataset):
        raise FileNotFoundError(f"dataset not found: {args.dataset}")
    geometry = args.geometry
    if geometry is None:
        beside = os.path.join(os.path.dirname(os.path.abspath(args.dataset)), GEOMETRY_FILE)
        geometry = beside if os.path.exists(beside) else None
    elif not os.path.exists(geometry):
        raise FileNotFoundError(f"geometry not found: {geometry}")
    return load_dataset(args.dataset, geometry)


def _route(args, ds: Dataset):
    if args.route is None:
        if len(ds.routes) != 1:
            raise UsageError(f"--route is required (geometry holds {len(ds.routes)} routes)")
        return next(iter(ds.routes.values()))
    if args.route not in ds.routes:
        raise KeyError(f"unknown route {args.route!r}; known: {sorted(ds.routes)}")
    return ds.routes[args.route]


def _check_dates(ds: Dataset, dates):
    have = set(ds.dates)
    absent = [d.isoformat() for d in dates if d not in have]
    if absent:
        raise InsufficientDataError(f"no records for date(s) {', '.join(absent)}")


def _sim_config(args) -> SimulationConfig:
    if not 0.0 < args.alpha <= 1.0:
        raise UsageError(f"--alpha must lie in (0, 1], got {args.alpha}")
    if args.runs < 1:
        raise UsageError("--runs must be positive")
    return SimulationConfig(alpha=args.alpha, n_runs=args.runs, seed=args.seed)


@contextlib.contextmanager
def _output(path):
    if path is None:
        yield sys.stdout
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        yield fh


# -- subcommands --------------------------------------------------------------

def cmd_synth(args) -> int:
    _require(args, "scenario", "out")
    scenario = load_scenario(args.scenario)
    ds = generate_synthetic(scenario, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    save_dataset(ds, os.path.join(args.out, RECORDS_FILE), os.path.join(args.out, GEOMETRY_FILE))
    return EXIT_OK


def cmd_field(args) -> int:
    _require(args, "date")
    date = _one_date(args.date)
    try:
        params = AsmParams(args.c_free, args.c_cong, args.v_c, args.delta_v)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = _load(args)
    route = _route(args, ds)
    _check_dates(ds, [date])
    meas = measurements_from_records(ds, route, date)
    # sigma is half a link length, so this is the median observed link length
    dx = float(np.median(2.0 * meas.sigma)) if args.dx is None and len(meas) else args.dx
    field = reconstruct_grid(meas, params, dx=dx, dt=args.dt, n_jobs=args.n_jobs)
    header = {"route": route.id, "date": date.isoformat(), "dx_m": dx, "dt_s": args.dt}
    with _output(args.out) as fh:
        write_grid(field, fh, header)
    return EXIT_OK


def cmd_estimate(args) -> int:
    _require(args, "date", "departure")
    dates = parse_dates(args.date)
    deps = parse_departures(args.departure, args.step)
    config = _sim_config(args)
    ds = _load(args)
    route = _route(args, ds)
    _check_dates(ds, dates)
    scheme = TodScheme.from_name(args.scheme)
    ests = [estimate_travel_time(ds, route, dates, t, scheme, config, n_jobs=args.n_jobs) for t in deps]
    header = {
        "route": route.id,
        "dates": ",".join(d.isoformat() for d in dates),
        "scheme": scheme.short_name,
        "alpha": config.alpha,
        "runs": config.n_runs,
        "seed": config.seed,
        "n_percentiles": N_PERCENTILES,
        "departures": args.departure,
        "step_min": args.step,
    }
    with _output(args.out) as fh:
        write_estimation_report(ests, fh, header)
    return EXIT_OK


def cmd_forecast(args) -> int:
    _require(args, "date", "departure")
    date = _one_date(args.date)
    t = parse_departures(args.departure, 1)
    if len(t) != 1:
        raise UsageError("forecast takes a single departure time")
    t = t[0]
    config = _sim_config(args)
    exclusions = frozenset(parse_dates(args.exclude_dates))
    custom = tuple(parse_dates(args.custom_dates))
    if args.all_strategies:
        strategies = [HistoryStrategy(k, args.weekday_lock, exclusions) for k in STRATEGY_WEEKS]
    elif args.strategy == "custom":
        if not custom:
            raise UsageError("--strategy custom needs --custom-dates")
        strategies = [HistoryStrategy.custom(custom, weekday_lock=args.weekday_lock, exclusions=exclusions)]
    else:
        strategies = [HistoryStrategy(args.strategy, args.weekday_lock, exclusions)]
    schemes = list(SCHEMES) if args.all_strategies else [args.scheme]

    ds = _load(args)
    route = _route(args, ds)
    _check_dates(ds, [date])
    target = (date, t)

    rows = []
    ref_schemes = list(SCHEMES) if args.all_strategies else sorted({args.reference_scheme, args.scheme},
                                                                   key=SCHEMES.index)
    ref_summary = None
    for s in ref_schemes:
        est = reference_estimate(ds, route, target, TodScheme.from_name(s), config,
                                 n_jobs=args.n_jobs, return_estimate=True)
        if s == args.reference_scheme:
            ref_summary = est.summary
        rows.append(report_row("reference", 1, s, est.summary, est.fcd_sample_size))

    header = {
        "route": route.id,
        "target_date": date.isoformat(),
        "departure": _clock(t),
        "alpha": config.alpha,
        "runs": config.n_runs,
        "seed": config.seed,
        "reference_scheme": args.reference_scheme,
        "k": args.k,
        "weekday_lock": str(args.weekday_lock).lower(),
        "excluded_dates": ",".join(sorted(d.isoformat() for d in exclusions)),
    }
    for strat in strategies:
        for s in schemes:
            fc = forecast(ds, route, target, strat, TodScheme.from_name(s), config, n_jobs=args.n_jobs)
            header[f"historical_days[{strat.kind}]"] = ",".join(d.isoformat() for d in fc.days)
            rows.append(report_row(strat.kind, len(fc.days), s, fc.summary, fc.fcd_sample_size,
                                   compare(ref_summary, fc, args.k)))
    with _output(args.out) as fh:
        write_forecast_report(rows, fh, header)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "field": cmd_field, "estimate": cmd_estimate, "forecast": cmd_forecast}


def _fail(code: int, category: str, exc) -> int:
    msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
    print(f"fcdtt: error ({category}): {msg}", file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except FileNotFoundError as exc:
        return _fail(EXIT_INPUT, "not found", exc)
    except (DatasetParseError, SchemaError, DistributionError, json.JSONDecodeError, KeyError) as exc:
        return _fail(EXIT_INPUT, "input", exc)
    except LookupError as exc:
        # InsufficientHistoryError messages already list the dates found
        return _fail(EXIT_DATA, "insufficient data", exc)
    except BrokenPipeError:
        # downstream reader (e.g. ``head``) closed early; not an error
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK
    except GridTooLargeError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except Exception as exc:  # noqa: BLE001 - last-resort category
        return _fail(EXIT_INTERNAL, "internal", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())


import warnings

import numpy as np
import pytest
from sklearn.base import clone

from fcdtt.core import PercentileDistribution, build_cdf, sample
from fcdtt.estimation import (
    ESTIMATION_COLUMNS,
    FreeFlowFallback,
    InsufficientDataError,
    ShortIntervalWarning,
    SimulationConfig,
    TravelTimeMatrix,
    TripTimeEstimator,
    aggregate_route_records,
    build_matrix,
    estimate_distribution,
    estimate_travel_time,
    route_based_estimate,
    simulate_trip,
    write_estimation_report,
)
from fcdtt.ingestion import Dataset, LinkRecord, Route, RouteRecord, TodInterval, TodScheme, generate_synthetic
from scenarios import HOUR, MONDAYS_FEB_2016, constant_scenario, corridor, dependence_scenario

D0, D1 = MONDAYS_FEB_2016[:2]
FIVE = TodScheme.fixed(5)


def uniform_matrix(route, cells_per_link, scheme=FIVE):
    """Matrix whose every interval of link i uses cells_per_link[i]."""
    cells = tuple(tuple(c for _ in range(len(scheme))) for c in cells_per_link)
    return TravelTimeMatrix(route, scheme, cells, np.ones((len(route), len(scheme)), dtype=int))


def linear_cdf(lo, hi):
    return build_cdf(PercentileDistribution(np.linspace(lo, hi, 19)))


def speed_record(link, date, start, speeds, length=1000.0, size=4):
    sp = np.asarray(speeds, dtype=float)
    return LinkRecord(link, date, TodInterval(start, start + 300), size, PercentileDistribution(sp),
                      PercentileDistribution(length * 3.6 / sp[::-1]), 100.0)


def route_record(start, width, tts, size=10, date=D0):
    return RouteRecord("R1", date, TodInterval(start, start + width), size, PercentileDistribution(tts))


def test_empty_dataset_falls_back():
    route = corridor(n_links=3)
    m = build_matrix(Dataset(routes={"R1": route}), route, FIVE, [D0])
    assert m.is_fallback().all()
    assert m.cell(1, 50) == FreeFlowFallback(100.0)


def test_single_record_round_trip():
    route = corridor(n_links=2)
    speeds = np.linspace(60.0, 110.0, 19)
    ds = Dataset((speed_record("L00", D0, 7 * HOUR, speeds),), routes={"R1": route})
    m = build_matrix(ds, route, FIVE, [D0])
    j = FIVE.index_of(7 * HOUR)
    np.testing.assert_array_equal(m.cell(0, j).values, speeds)
    assert m.is_fallback().sum() == 2 * 288 - 1


def test_pooled_median_between_sources():
    route = corridor(n_links=1)
    a = speed_record("L00", D0, 7 * HOUR, np.linspace(50, 70, 19))
    b = speed_record("L00", D1, 7 * HOUR, np.linspace(80, 100, 19))
    m = build_matrix(Dataset((a, b), routes={"R1": route}), route, FIVE, [D0, D1])
    cell = m.cell(0, FIVE.index_of(7 * HOUR))
    # explicit merge of 500 stratified draws per source
    u = (np.arange(500) + 0.5) / 500
    merged = np.r_[sample(build_cdf(a.speed_percentiles), u), sample(build_cdf(b.speed_percentiles), u)]
    assert 60.0 < cell.values[9] < 90.0
    assert cell.values[9] == pytest.approx(np.median(merged), rel=1e-9)


def test_coarse_scheme_pools_native_records():
    route = corridor(n_links=1)
    recs = tuple(speed_record("L00", D0, 7 * HOUR + k * 300, np.full(19, 60.0 + 10 * k), size=2)
                 for k in range(5))
    m = build_matrix(Dataset(recs, routes={"R1": route}), route, TodScheme.fixed(20), [D0])
    j = TodScheme.fixed(20).index_of(7 * HOUR)
    assert m.sample_sizes[0, j] == 8   # the fifth record falls in the next interval
    assert m.sample_sizes[0, j + 1] == 2
    assert m.cell(0, j).support == (60.0, 90.0)


def test_unknown_link_rejected():
    ds = Dataset(routes={"R1": corridor(n_links=2)})
    other = Route.from_segments("R2", [("X1", 1000.0, 100.0)])
    with pytest.raises(KeyError, match="X1"):
        build_matrix(ds, other, FIVE, [D0])


@pytest.mark.parametrize("alpha", [1.0, 0.5, 0.1])
def test_degenerate_trip_times(alpha):
    one = Route.from_segments("R", [("A", 10000.0, 100.0)])
    cfg = SimulationConfig(alpha=alpha, n_runs=10)
    m = uniform_matrix(one, [FreeFlowFallback(100.0)])
    assert simulate_trip(m, 3600.0, cfg, 3).travel_time == 360.0
    two = Route.from_segments("R", [("A", 1000.0, 60.0), ("B", 1000.0, 60.0)])
    flat = linear_cdf(60.0, 60.0)
    res = simulate_trip(uniform_matrix(two, [flat, flat]), 3600.0, cfg, 0)
    assert res.travel_time == pytest.approx(120.0, abs=1e-12)
    est = estimate_distribution(uniform_matrix(two, [flat, flat]), 3600.0, SimulationConfig(alpha, 300))
    assert est.summary.std == 0.0


def test_trip_result_trace():
    route = corridor(n_links=4)
    m = uniform_matrix(route, [linear_cdf(60, 120)] * 4)
    res = simulate_trip(m, 7 * HOUR, SimulationConfig(n_runs=5), 2)
    assert res.entry_times[0] == 7 * HOUR
    np.testing.assert_allclose(np.diff(res.entry_times), res.link_times[:-1])
    assert res.travel_time == pytest.approx(res.link_times.sum())
    assert len(res.trace) == 4


def test_alpha_one_matches_independent_oracle():
    rng = np.random.default_rng(42)
    route = corridor(n_links=10)
    cells = [linear_cdf(lo, lo + w) for lo, w in zip(rng.uniform(40, 80, 10), rng.uniform(10, 50, 10))]
    m = uniform_matrix(route, cells)
    est = estimate_distribution(m, 8 * HOUR, SimulationConfig(alpha=1.0, n_runs=10_000, seed=1))
    # separate implementation: every link sampled unconstrained
    oracle_rng = np.random.default_rng(99)
    total = np.zeros(10_000)
    for cell, length in zip(cells, route.lengths):
        speeds = np.interp(oracle_rng.random(10_000), cell.probs, cell.values)
        total += length * 3.6 / speeds
    assert est.summary.mean == pytest.approx(total.mean(), rel=0.01)
    assert est.summary.std == pytest.approx(total.std(), rel=0.05)


def test_link_entry_time_selects_cell():
    # link 0 takes 60 s, so link 1 is entered in the next 5-minute interval
    route = Route.from_segments("R", [("A", 1000.0, 60.0), ("B", 1000.0, 60.0)])
    slow, fast = linear_cdf(30.0, 30.0), linear_cdf(60.0, 60.0)
    cells = ((fast,) * 288, (fast,) * 100 + (slow,) + (fast,) * 187)
    m = TravelTimeMatrix(route, FIVE, cells, np.ones((2, 288), dtype=int))
    cfg = SimulationConfig(n_runs=1)
    assert simulate_trip(m, 100 * 300 - 30, cfg, 0).travel_time == pytest.approx(60 + 120)
    assert simulate_trip(m, 100 * 300 - 90, cfg, 0).travel_time == pytest.approx(120)


@pytest.fixture(scope="module")
def dense_matrix():
    sc = dependence_scenario()
    return build_matrix(generate_synthetic(sc, seed=0), sc.route, FIVE, [D0])


def test_alpha_increases_spread(dense_matrix):
    wide = estimate_distribution(dense_matrix, 8.5 * HOUR, SimulationConfig(alpha=0.1, n_runs=500))
    narrow = estimate_distribution(dense_matrix, 8.5 * HOUR, SimulationConfig(alpha=1.0, n_runs=500))
    assert wide.summary.std > narrow.summary.std


def test_runs_convergence(dense_matrix):
    a = estimate_distribution(dense_matrix, 8 * HOUR, SimulationConfig(n_runs=500, seed=3))
    b = estimate_distribution(dense_matrix, 8 * HOUR, SimulationConfig(n_runs=1000, seed=3))
    assert a.summary.mean == pytest.approx(b.summary.mean, rel=0.02)


def test_deterministic_and_parallel_invariant(dense_matrix):
    cfg = SimulationConfig(alpha=0.3, n_runs=700, seed=5)
    a = estimate_distribution(dense_matrix, 8 * HOUR, cfg)
    b = estimate_distribution(dense_matrix, 8 * HOUR, cfg, n_jobs=3)
    np.testing.assert_array_equal(a.samples, b.samples)
    # each run has its own substream, so a single trip reproduces its sample
    one = simulate_trip(dense_matrix, 8 * HOUR, cfg, 123).travel_time
    assert one in a.samples


def test_config_validation():
    for bad in (dict(alpha=0.0), dict(alpha=1.5), dict(n_runs=0), dict(seed=-1)):
        with pytest.raises(ValueError):
            SimulationConfig(**bad)


def test_route_based_examples():
    s = route_based_estimate([route_record(6 * HOUR, 4 * HOUR, np.full(19, 1800.0))], 7 * HOUR, 100, 0)
    assert s.mean == 1800.0 and s.std == 0.0
    lin = route_record(6 * HOUR, 4 * HOUR, np.linspace(1500.0, 2100.0, 19))
    s = route_based_estimate([lin], 7 * HOUR, 10_000, 0)
    assert s.mean == pytest.approx(build_cdf(lin.travel_time_percentiles).mean(), rel=0.01)
    assert s.mean == pytest.approx(1800.0, rel=0.01)
    with pytest.raises(InsufficientDataError):
        route_based_estimate([lin], 12 * HOUR, 10, 0)


def test_short_interval_warning():
    short = route_record(8 * HOUR, 300, np.linspace(1650.0, 1800.0, 19))
    with pytest.warns(ShortIntervalWarning):
        route_based_estimate([short], 8 * HOUR + 10, 50, 0, free_flow_time=28 * 60)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        route_based_estimate([route_record(6 * HOUR, 4 * HOUR, np.linspace(1650.0, 1800.0, 19))],
                             8 * HOUR, 50, 0, free_flow_time=28 * 60)


def test_route_records_aggregate_to_demand_intervals():
    demand = TodScheme.from_name("demand5")
    recs = [route_record(6 * HOUR + k * 300, 300, np.full(19, 1000.0 + 100 * k), size=1) for k in range(3)]
    recs.append(route_record(11 * HOUR, 300, np.full(19, 900.0), size=1))
    out = aggregate_route_records(recs, demand)
    assert [r.tod for r in out] == [demand.intervals[1], demand.intervals[2]]
    assert out[0].sample_size == 3
    assert out[0].travel_time_percentiles.values[0] == 1000.0
    assert out[0].travel_time_percentiles.values[-1] == 1200.0


def test_scheme_dispatch_and_estimator():
    sc = constant_scenario()
    ds = generate_synthetic(sc, 0)
    cfg = SimulationConfig(n_runs=50)
    est = estimate_travel_time(ds, "R1", [D0], 7 * HOUR, TodScheme.fixed(20), cfg)
    assert est.summary.mean == pytest.approx(720.0) and est.summary.std == pytest.approx(0.0, abs=1e-9)
    route = estimate_travel_time(ds, "R1", [D0], 7 * HOUR, TodScheme.from_name("demand5"), cfg)
    assert route.scheme == "demand-based-5" and route.summary.mean == pytest.approx(720.0)

    model = TripTimeEstimator(scheme="20min", n_runs=50)
    assert clone(model).get_params()["scheme"] == "20min"
    pred = model.fit(ds).predict([7 * HOUR, 7.5 * HOUR])
    np.testing.assert_allclose(pred, 720.0)
    assert model.predict_std([7 * HOUR])[0] == pytest.approx(0.0, abs=1e-9)


def test_report_columns(dense_matrix, tmp_path):
    ests = [estimate_distribution(dense_matrix, t, SimulationConfig(n_runs=50)) for t in (7 * HOUR, 8 * HOUR)]
    p = tmp_path / "est.csv"
    with open(p, "w") as fh:
        write_estimation_report(ests, fh, {"runs": 50})
    lines = p.read_text().splitlines()
    assert lines[0] == "# runs: 50"
    assert lines[1].split(",") == ESTIMATION_COLUMNS
    assert len(ESTIMATION_COLUMNS) == 5 + 19 and len(lines) == 4


def test_late_departure_wraps_day():
    route = corridor(n_links=2)
    m = uniform_matrix(route, [linear_cdf(100.0, 100.0)] * 2)
    res = simulate_trip(m, 86400 - 10, SimulationConfig(n_runs=1), 0)
    assert res.travel_time == pytest.approx(72.0)
    with pytest.raises(ValueError):
        simulate_trip(m, 86400, SimulationConfig(n_runs=1), 0)

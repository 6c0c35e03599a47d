"""Travel-time distributions and ASM speed fields from floating car data.

Subpackages: ``core`` (percentile CDFs), ``ingestion`` (records, files,
synthetic scenarios), ``speedfield`` (adaptive smoothing), ``estimation``
(Monte Carlo trip simulation), ``prediction`` (historical forecasts) and
``cli``.
"""
from .core import (
    PERCENTILES,
    DistributionError,
    PercentileDistribution,
    PiecewiseCdf,
    SampleSummary,
    build_cdf,
    pool_percentiles,
    quantile_of,
    sample,
    summarize,
    truncated_sample,
)
from .estimation import (
    Estimate,
    InsufficientDataError,
    ShortIntervalWarning,
    SimulationConfig,
    TravelTimeMatrix,
    TripTimeEstimator,
    build_matrix,
    estimate_distribution,
    estimate_travel_time,
    route_based_estimate,
    simulate_trip,
)
from .ingestion import (
    CongestionEvent,
    Dataset,
    FcdQuery,
    LinkRecord,
    Route,
    RouteRecord,
    ScenarioSpec,
    TodScheme,
    generate_synthetic,
    load_dataset,
    query,
    save_dataset,
)
from .prediction import (
    HistoryStrategy,
    InsufficientHistoryError,
    compare,
    forecast,
    reference_estimate,
    select_historical_days,
)
from .speedfield import AdaptiveSmoother, AsmParams, SpeedField, evaluate, reconstruct_grid, virtual_trajectory

__version__ = "0.1.0"

__all__ = [
    "PERCENTILES",
    "AdaptiveSmoother",
    "AsmParams",
    "CongestionEvent",
    "Dataset",
    "DistributionError",
    "Estimate",
    "FcdQuery",
    "HistoryStrategy",
    "InsufficientDataError",
    "InsufficientHistoryError",
    "LinkRecord",
    "PercentileDistribution",
    "PiecewiseCdf",
    "Route",
    "RouteRecord",
    "SampleSummary",
    "ScenarioSpec",
    "ShortIntervalWarning",
    "SimulationConfig",
    "SpeedField",
    "TodScheme",
    "TravelTimeMatrix",
    "TripTimeEstimator",
    "build_cdf",
    "build_matrix",
    "compare",
    "estimate_distribution",
    "estimate_travel_time",
    "evaluate",
    "forecast",
    "generate_synthetic",
    "load_dataset",
    "pool_percentiles",
    "quantile_of",
    "query",
    "reconstruct_grid",
    "reference_estimate",
    "route_based_estimate",
    "sample",
    "save_dataset",
    "select_historical_days",
    "simulate_trip",
    "summarize",
    "truncated_sample",
    "virtual_trajectory",
]

"""Dataset schema, file I/O, query filter and synthetic scenario generation."""
from .dataset import (
    Dataset,
    DatasetParseError,
    dumps_geometry,
    dumps_records,
    load_dataset,
    load_geometry,
    query,
    save_dataset,
    save_geometry,
)
from .schema import (
    DAY_S,
    NATIVE_TOD_S,
    FcdQuery,
    Link,
    LinkRecord,
    Route,
    RouteRecord,
    SchemaError,
    TodInterval,
    TodScheme,
    parse_weekdays,
)
from .synthetic import (
    CongestionEvent,
    ScenarioSpec,
    band_contains,
    generate_synthetic,
    load_scenario,
    scenario_onsets,
    true_median_speed,
)

__all__ = [
    "DAY_S",
    "NATIVE_TOD_S",
    "CongestionEvent",
    "Dataset",
    "DatasetParseError",
    "FcdQuery",
    "Link",
    "LinkRecord",
    "Route",
    "RouteRecord",
    "ScenarioSpec",
    "SchemaError",
    "TodInterval",
    "TodScheme",
    "band_contains",
    "dumps_geometry",
    "dumps_records",
    "generate_synthetic",
    "load_dataset",
    "load_geometry",
    "load_scenario",
    "parse_weekdays",
    "query",
    "save_dataset",
    "save_geometry",
    "scenario_onsets",
    "true_median_speed",
]

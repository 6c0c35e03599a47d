"""Adaptive smoothing method (ASM) speed-field reconstruction.

Discrete median-speed measurements ``v_i`` at link midpoints ``x_i`` and
interval midpoints ``t_i`` are smoothed twice with the anisotropic kernel

    phi(dx, dt) = exp(-(|dx| / sigma_i + |dt| / tau))

once along characteristics of free traffic (``dt -> dt - dx / c_free``) and
once along congested characteristics (``c_cong``). The two component fields
are blended by the congestion weight
``w = (1 + tanh((v_c - min(V_free, V_cong)) / delta_v)) / 2``.

Positions are meters and times seconds internally; speeds and propagation
velocities are km/h at every public boundary.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

__all__ = [
    "AsmParams",
    "Measurement",
    "Measurements",
    "SpeedGrid",
    "SpeedField",
    "Trajectory",
    "AdaptiveSmoother",
    "ExtrapolationWarning",
    "GridTooLargeError",
    "StallError",
    "kernel_weight",
    "component_field",
    "congestion_weight",
    "evaluate",
    "reconstruct_grid",
    "virtual_trajectory",
    "measurements_from_records",
    "write_grid",
]

KMH_TO_MS = 1.0 / 3.6
DEFAULT_CUTOFF = 1e-8
DEFAULT_MAX_CELLS = 4_000_000
_CHUNK = 512


class ExtrapolationWarning(UserWarning):
    """Evaluation point lies outside the measurement extent."""


class GridTooLargeError(RuntimeError):
    pass


class StallError(RuntimeError):
    """A virtual vehicle stayed below the minimum speed for too long."""


@dataclass(frozen=True)
class AsmParams:
    c_free: float = 70.0
    c_cong: float = -15.0
    v_c: float = 50.0
    delta_v: float = 10.0

    def __post_init__(self):
        if not (self.c_free > 0 > self.c_cong):
            raise ValueError("propagation velocities must satisfy c_free > 0 > c_cong")
        if not self.delta_v > 0:
            raise ValueError("delta_v must be positive")

    @property
    def c_free_ms(self) -> float:
        return self.c_free * KMH_TO_MS

    @property
    def c_cong_ms(self) -> float:
        return self.c_cong * KMH_TO_MS

    def as_header(self) -> dict[str, float]:
        return {"c_free_kmh": self.c_free, "c_cong_kmh": self.c_cong,
                "v_c_kmh": self.v_c, "delta_v_kmh": self.delta_v}


@dataclass(frozen=True)
class Measurement:
    position: float
    time: float
    speed: float
    sigma: float
    tau: float


@dataclass(frozen=True, eq=False)
class Measurements:
    """Column store of measurements, kept sorted by (time, position)."""

    position: np.ndarray
    time: np.ndarray
    speed: np.ndarray
    sigma: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        cols = [np.array(getattr(self, k), dtype=float).reshape(-1)
                for k in ("position", "time", "speed", "sigma", "tau")]
        n = cols[0].size
        if n == 0:
            raise ValueError("at least one measurement is required")
        if any(c.size != n for c in cols):
            raise ValueError("measurement columns differ in length")
        pos, time, speed, sigma, tau = cols
        if not np.all(np.isfinite(np.concatenate(cols))):
            raise ValueError("measurements must be finite")
        if np.any(sigma <= 0) or np.any(tau <= 0):
            raise ValueError("sigma and tau must be positive")
        if np.any(speed <= 0):
            raise ValueError("measured speeds must be positive")
        order = np.lexsort((pos, time))
        for name, col in zip(("position", "time", "speed", "sigma", "tau"), cols):
            col = col[order]
            col.setflags(write=False)
            object.__setattr__(self, name, col)

    @classmethod
    def from_list(cls, items: Iterable[Measurement]) -> "Measurements":
        items = list(items)
        return cls(
            position=[m.position for m in items],
            time=[m.time for m in items],
            speed=[m.speed for m in items],
            sigma=[m.sigma for m in items],
            tau=[m.tau for m in items],
        )

    def __len__(self):
        return self.position.size

    def shifted(self, dx: float = 0.0, dt: float = 0.0) -> "Measurements":
        return Measurements(self.position + dx, self.time + dt, self.speed, self.sigma, self.tau)

    @property
    def x_extent(self) -> tuple[float, float]:
        return float(np.min(self.position - self.sigma)), float(np.max(self.position + self.sigma))

    @property
    def t_extent(self) -> tuple[float, float]:
        return float(np.min(self.time - self.tau)), float(np.max(self.time + self.tau))


def measurements_from_records(dataset, route, date) -> Measurements:
    """Median-speed measurements of ``route``'s links on ``date``.

    Uses the stored 50th percentile directly; records without samples are
    skipped.
    """
    out = []
    for lk in route.links:
        for rec in dataset.records_for_link(lk.id, [date]):
            if rec.sample_size == 0:
                continue
            out.append(Measurement(
                position=lk.midpoint_position,
                time=rec.tod.midpoint,
                speed=rec.median_speed,
                sigma=lk.length / 2.0,
                tau=rec.tod.width / 2.0,
            ))
    if not out:
        raise LookupError(f"no observed link records for route {route.id} on {date}")
    return Measurements.from_list(out)


def kernel_weight(dx, dt, sigma, tau):
    """Smoothing kernel ``exp(-(|dx|/sigma + |dt|/tau))``."""
    return np.exp(-(np.abs(dx) / sigma + np.abs(dt) / tau))


def congestion_weight(v_free, v_cong, params: AsmParams = AsmParams()):
    """Degree of congestion in (0, 1); 0.5 where the slower component equals ``v_c``."""
    v_min = np.minimum(v_free, v_cong)
    return 0.5 * (1.0 + np.tanh((params.v_c - v_min) / params.delta_v))


def _time_window(m: Measurements, params_c: Sequence[float], cutoff: float) -> float:
    # a measurement is cut once |dx|/sigma alone exceeds the log cutoff, so its
    # time offset along the slowest characteristic is bounded by this window
    cut = -math.log(cutoff)
    c_slow = min(abs(c) for c in params_c)
    return cut * (float(m.tau.max()) + float(m.sigma.max()) / c_slow)


def _component_chunk(xq, tq, m: Measurements, idx, c_ms: float, cutoff: float, v_floor: float):
    px, pt = m.position[idx], m.time[idx]
    sig, tau, dv = m.sigma[idx], m.tau[idx], m.speed[idx] - v_floor
    dx = xq[:, None] - px[None, :]
    dt = tq[:, None] - pt[None, :] - dx / c_ms
    a = np.abs(dx) / sig + np.abs(dt) / tau
    cut = -math.log(cutoff)
    a_min = a.min(axis=1)
    far = a_min > cut
    w = np.exp(-a)
    w[a > cut] = 0.0
    if np.any(far):
        # every weight would be cut; fall back to the relative kernel
        w[far] = np.exp(-(a[far] - a_min[far, None]))
    num = (w * dv).sum(axis=1)
    den = w.sum(axis=1)
    return v_floor + num / den


def _components(xq, tq, m: Measurements, params: AsmParams, cutoff: float):
    """(V_free, V_cong) at flattened query points, evaluated in fixed chunks."""
    xq = np.asarray(xq, dtype=float).reshape(-1)
    tq = np.asarray(tq, dtype=float).reshape(-1)
    v_floor = float(m.speed.min())
    window = _time_window(m, (params.c_free_ms, params.c_cong_ms), cutoff)
    free = np.empty(xq.size)
    cong = np.empty(xq.size)
    for s in range(0, xq.size, _CHUNK):
        sl = slice(s, s + _CHUNK)
        lo = np.searchsorted(m.time, tq[sl].min() - window, side="left")
        hi = np.searchsorted(m.time, tq[sl].max() + window, side="right")
        idx = np.arange(lo, hi) if hi > lo else np.arange(len(m))
        free[sl] = _component_chunk(xq[sl], tq[sl], m, idx, params.c_free_ms, cutoff, v_floor)
        cong[sl] = _component_chunk(xq[sl], tq[sl], m, idx, params.c_cong_ms, cutoff, v_floor)
    return free, cong


def component_field(measurements: Measurements, c: float, x, t, *, cutoff: float = DEFAULT_CUTOFF):
    """One smoothing pass along characteristics of speed ``c`` (km/h)."""
    if not isinstance(measurements, Measurements):
        measurements = Measurements.from_list(measurements)
    if c == 0:
        raise ValueError("propagation velocity must be non-zero")
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    m = measurements
    v_floor = float(m.speed.min())
    window = _time_window(m, (c * KMH_TO_MS,), cutoff)
    xf, tf = x.reshape(-1), t.reshape(-1)
    out = np.empty(xf.size)
    for s in range(0, xf.size, _CHUNK):
        sl = slice(s, s + _CHUNK)
        lo = np.searchsorted(m.time, tf[sl].min() - window, side="left")
        hi = np.searchsorted(m.time, tf[sl].max() + window, side="right")
        idx = np.arange(lo, hi) if hi > lo else np.arange(len(m))
        out[sl] = _component_chunk(xf[sl], tf[sl], m, idx, c * KMH_TO_MS, cutoff, v_floor)
    out = out.reshape(x.shape)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class SpeedGrid:
    positions: np.ndarray   # cell centers, m
    times: np.ndarray       # cell centers, s
    speed: np.ndarray       # (n_positions, n_times), km/h
    weight: np.ndarray      # congestion weight, same shape

    @property
    def shape(self) -> tuple[int, int]:
        return self.speed.shape


@dataclass(frozen=True, eq=False)
class SpeedField:
    measurements: Measurements
    params: AsmParams = AsmParams()
    grid: Optional[SpeedGrid] = None
    cutoff: float = DEFAULT_CUTOFF

    def components(self, x, t):
        """``(V_free, V_cong, w)`` at the given points."""
        x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
        free, cong = _components(x, t, self.measurements, self.params, self.cutoff)
        w = congestion_weight(free, cong, self.params)
        shape = x.shape
        return free.reshape(shape), cong.reshape(shape), w.reshape(shape)

    def evaluate(self, x, t):
        return evaluate(self, x, t)

    def in_extent(self, x, t) -> np.ndarray:
        x0, x1 = self.measurements.x_extent
        t0, t1 = self.measurements.t_extent
        x, t = np.asarray(x), np.asarray(t)
        return (x >= x0) & (x <= x1) & (t >= t0) & (t <= t1)


def _blend(free, cong, w):
    # written as an offset from V_free so equal components return exactly
    v = free + w * (cong - free)
    return np.clip(v, np.minimum(free, cong), np.maximum(free, cong))


def evaluate(field: SpeedField, x, t):
    """Speed (km/h) of the reconstructed field at ``(x, t)``; vectorized."""
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    if not np.all(field.in_extent(x, t)):
        warnings.warn("evaluating the speed field outside the measurement extent",
                      ExtrapolationWarning, stacklevel=2)
    free, cong = _components(x, t, field.measurements, field.params, field.cutoff)
    w = congestion_weight(free, cong, field.params)
    out = _blend(free, cong, w).reshape(x.shape)
    return float(out) if out.ndim == 0 else out


def _cell_centers(lo: float, hi: float, step: float) -> np.ndarray:
    n = max(1, math.ceil((hi - lo) / step - 1e-9))
    width = (hi - lo) / n
    return lo + (np.arange(n) + 0.5) * width


def reconstruct_grid(
    measurements: Measurements,
    params: AsmParams = AsmParams(),
    dx: Optional[float] = None,
    dt: Optional[float] = None,
    *,
    max_cells: int = DEFAULT_MAX_CELLS,
    cutoff: float = DEFAULT_CUTOFF,
    n_jobs: Optional[int] = None,
) -> SpeedField:
    """Evaluate the field at cell centers tiling the measurement extent.

    ``dx`` defaults to the median link length and ``dt`` to 300 s. Steps are
    shrunk slightly when needed so cells tile the extent exactly. Results do
    not depend on ``n_jobs``: cells are evaluated in fixed chunks.
    """
    if not isinstance(measurements, Measurements):
        measurements = Measurements.from_list(measurements)
    if dx is None:
        dx = float(np.median(2.0 * measurements.sigma))
    if dt is None:
        dt = 300.0
    if not (dx > 0 and dt > 0):
        raise ValueError("grid steps must be positive")
    xs = _cell_centers(*measurements.x_extent, dx)
    ts = _cell_centers(*measurements.t_extent, dt)
    n_cells = xs.size * ts.size
    if n_cells > max_cells:
        raise GridTooLargeError(f"grid of {n_cells} cells exceeds the budget of {max_cells}")

    # time-major flattening keeps each chunk inside a narrow time window
    tt, xx = np.meshgrid(ts, xs, indexing="ij")
    xf, tf = xx.reshape(-1), tt.reshape(-1)
    bounds = [(s, min(s + 8 * _CHUNK, xf.size)) for s in range(0, xf.size, 8 * _CHUNK)]

    def work(b):
        s, e = b
        return _components(xf[s:e], tf[s:e], measurements, params, cutoff)

    if n_jobs is not None and n_jobs != 1 and len(bounds) > 1:
        workers = None if n_jobs < 0 else n_jobs
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    free = np.concatenate([p[0] for p in parts])
    cong = np.concatenate([p[1] for p in parts])
    w = congestion_weight(free, cong, params)
    speed = _blend(free, cong, w)
    shape = (ts.size, xs.size)
    grid = SpeedGrid(
        positions=xs,
        times=ts,
        speed=speed.reshape(shape).T.copy(),
        weight=w.reshape(shape).T.copy(),
    )
    return SpeedField(measurements, params, grid, cutoff)


@dataclass(frozen=True, eq=False)
class Trajectory:
    departure_time: float
    arrival_time: float
    path: np.ndarray  # (n, 2) rows of (x_m, t_s)

    @property
    def travel_time(self) -> float:
        return self.arrival_time - self.departure_time


def virtual_trajectory(
    field: SpeedField,
    departure_time: float,
    origin: float,
    destination: float,
    *,
    step: Optional[float] = None,
    min_speed_kmh: float = 1.0,
    stall_timeout_s: float = 7200.0,
) -> Trajectory:
    """Drive a virtual vehicle through the field with forward Euler steps.

    The default step is ``min(30 s, tau/4)`` with ``tau`` the median temporal
    smoothing width. The final step is shortened to land on ``destination``.
    """
    if not origin < destination:
        raise ValueError("origin must lie upstream of destination")
    if step is None:
        step = min(30.0, float(np.median(field.measurements.tau)) / 4.0)
    if not step > 0:
        raise ValueError("integration step must be positive")
    x, t = float(origin), float(departure_time)
    path = [(x, t)]
    stalled = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtrapolationWarning)
        while x < destination:
            v = evaluate(field, x, t) * KMH_TO_MS
            if v * 3.6 <= min_speed_kmh:
                stalled += step
                if stalled > stall_timeout_s:
                    raise StallError(
                        f"vehicle below {min_speed_kmh} km/h for over {stall_timeout_s} s at x={x:.0f} m"
                    )
            else:
                stalled = 0.0
            if x + v * step >= destination:
                t += (destination - x) / v
                x = float(destination)
            else:
                x += v * step
                t += step
            path.append((x, t))
    return Trajectory(float(departure_time), t, np.array(path))


def write_grid(field: SpeedField, fh, extra_header: Optional[dict] = None) -> None:
    """Plot-ready ``x_m,t_s,speed_kmh`` table with a ``#`` header block."""
    if field.grid is None:
        raise ValueError("field has no cached grid; use reconstruct_grid first")
    header = dict(field.params.as_header())
    header["cutoff"] = field.cutoff
    header["n_measurements"] = len(field.measurements)
    header["grid_shape"] = "x".join(str(n) for n in field.grid.shape)
    if extra_header:
        header.update(extra_header)
    for key, val in header.items():
        fh.write(f"# {key}: {val}\n")
    fh.write("x_m,t_s,speed_kmh\n")
    g = field.grid
    for i, x in enumerate(g.positions):
        for j, t in enumerate(g.times):
            fh.write(f"{x:.3f},{t:.3f},{g.speed[i, j]:.6f}\n")


class AdaptiveSmoother(RegressorMixin, BaseEstimator):
    """Scikit-learn regressor wrapper around the ASM speed field.

    ``X`` has two columns, position (m) and time (s); ``y`` holds speeds in
    km/h. Per-sample smoothing widths go to ``fit`` as ``sigma`` and ``tau``
    (scalars broadcast).

    Examples
    --------
    >>> import numpy as np
    >>> X = np.array([[500.0, 150.0], [1500.0, 150.0]])
    >>> est = AdaptiveSmoother().fit(X, [90.0, 90.0], sigma=500.0, tau=150.0)
    >>> float(est.predict([[1000.0, 150.0]])[0])
    90.0
    """

    def __init__(self, c_free=70.0, c_cong=-15.0, v_c=50.0, delta_v=10.0,
                 cutoff=DEFAULT_CUTOFF, n_jobs=None):
        self.c_free = c_free
        self.c_cong = c_cong
        self.v_c = v_c
        self.delta_v = delta_v
        self.cutoff = cutoff
        self.n_jobs = n_jobs

    def _params(self) -> AsmParams:
        return AsmParams(self.c_free, self.c_cong, self.v_c, self.delta_v)

    def fit(self, X, y, sigma=None, tau=None):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[1] != 2:
            raise ValueError(f"X must have 2 columns (position, time), got {X.shape[1]}")
        if sigma is None or tau is None:
            raise ValueError("sigma and tau smoothing widths are required")
        n = X.shape[0]
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (n,))
        tau = np.broadcast_to(np.asarray(tau, dtype=float), (n,))
        self.field_ = SpeedField(Measurements(X[:, 0], X[:, 1], y, sigma, tau),
                                 self._params(), None, self.cutoff)
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "field_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError(f"X must have 2 columns (position, time), got {X.shape[1]}")
        return np.atleast_1d(evaluate(self.field_, X[:, 0], X[:, 1]))

    def congestion_weight(self, X):
        check_is_fitted(self, "field_")
        X = check_array(X, dtype=float)
        return self.field_.components(X[:, 0], X[:, 1])[2]

    def reconstruct_grid(self, dx=None, dt=None, **kwargs) -> SpeedField:
        check_is_fitted(self, "field_")
        kwargs.setdefault("n_jobs", self.n_jobs)
        return reconstruct_grid(self.field_.measurements, self.field_.params, dx, dt,
                                cutoff=self.cutoff, **kwargs)

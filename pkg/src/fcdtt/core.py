"""Percentile distributions, piecewise-linear CDFs and sample summaries.

Every distribution in the package is carried as the 19 percentiles
(5th, 10th, ..., 95th) the floating-car-data source reports. Sampling uses
inverse transform on the piecewise-linear interpolant through those points,
with the tails below p5 / above p95 clamped to the boundary values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PERCENTILES",
    "N_PERCENTILES",
    "MEDIAN_INDEX",
    "DistributionError",
    "PercentileDistribution",
    "PiecewiseCdf",
    "SampleSummary",
    "build_cdf",
    "sample",
    "quantile_of",
    "truncated_sample",
    "summarize",
    "pool_percentiles",
]

N_PERCENTILES = 19
# integer division keeps each level the nearest double to its decimal literal
PERCENTILES = np.arange(5, 100, 5) / 100.0
PERCENTILES.setflags(write=False)
MEDIAN_INDEX = 9


class DistributionError(ValueError):
    """Malformed percentile data or an invalid sampling request."""


@dataclass(frozen=True, eq=False)
class PercentileDistribution:
    """19 values at the 5th..95th percentiles, in one unit (km/h or s)."""

    values: np.ndarray

    def __init__(self, values, *, require_positive: bool = True):
        arr = np.array(values, dtype=float).reshape(-1)
        if arr.size != N_PERCENTILES:
            raise DistributionError(
                f"expected {N_PERCENTILES} percentile values, got {arr.size}"
            )
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise DistributionError(f"non-finite percentile value at index {bad[0]}")
        drops = np.flatnonzero(np.diff(arr) < 0)
        if drops.size:
            i = int(drops[0]) + 1
            raise DistributionError(
                f"percentile values must be non-decreasing: index {i} "
                f"({arr[i]!r}) < index {i - 1} ({arr[i - 1]!r})"
            )
        if require_positive and arr[0] <= 0:
            i = int(np.flatnonzero(arr <= 0)[-1])
            raise DistributionError(f"percentile value at index {i} is not positive")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def percentiles(self) -> np.ndarray:
        return PERCENTILES

    @property
    def median(self) -> float:
        return float(self.values[MEDIAN_INDEX])

    def points(self) -> list[tuple[float, float]]:
        return list(zip(PERCENTILES.tolist(), self.values.tolist()))

    def tolist(self) -> list[float]:
        return self.values.tolist()

    def __eq__(self, other):
        if not isinstance(other, PercentileDistribution):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash(self.values.tobytes())

    def __repr__(self):
        return f"PercentileDistribution(p5={self.values[0]:g}, p50={self.median:g}, p95={self.values[-1]:g})"


@dataclass(frozen=True, eq=False)
class PiecewiseCdf:
    """Piecewise-linear CDF through ``(value, probability)`` breakpoints.

    ``values`` are the breakpoint abscissae (non-decreasing), ``probs`` the
    cumulative probabilities 0.05..0.95. ``ppf`` is defined on all of [0, 1]
    by clamping the tails to the first/last value.
    """

    values: np.ndarray
    probs: np.ndarray

    @property
    def breakpoints(self) -> list[tuple[float, float]]:
        return list(zip(self.values.tolist(), self.probs.tolist()))

    @property
    def support(self) -> tuple[float, float]:
        return float(self.values[0]), float(self.values[-1])

    @property
    def is_degenerate(self) -> bool:
        return bool(self.values[0] == self.values[-1])

    def ppf(self, u):
        """Inverse CDF; ``u`` must lie in [0, 1]."""
        u_arr = np.asarray(u, dtype=float)
        if np.any((u_arr < 0.0) | (u_arr > 1.0)) or np.any(np.isnan(u_arr)):
            raise DistributionError("uniform fraction must lie in [0, 1]")
        # np.interp clamps outside [p5, p95] to the end values
        out = np.interp(u_arr, self.probs, self.values)
        return float(out) if out.ndim == 0 else out

    def cdf(self, value):
        """CDF at ``value``; ties across equal breakpoints resolve to the midpoint."""
        v = np.asarray(value, dtype=float)
        xs, ps = self.values, self.probs
        lo = np.searchsorted(xs, v, side="left")
        hi = np.searchsorted(xs, v, side="right")
        out = np.empty(v.shape, dtype=float)

        exact = hi > lo
        if np.any(exact):
            out[exact] = 0.5 * (ps[lo[exact]] + ps[hi[exact] - 1])

        below = (~exact) & (lo == 0)
        above = (~exact) & (lo == xs.size)
        out[below] = 0.0
        out[above] = 1.0

        inner = ~(exact | below | above)
        if np.any(inner):
            j = lo[inner]
            x0, x1 = xs[j - 1], xs[j]
            p0, p1 = ps[j - 1], ps[j]
            out[inner] = p0 + (v[inner] - x0) / (x1 - x0) * (p1 - p0)
        return float(out) if out.ndim == 0 else out

    def mean(self) -> float:
        """Mean of the clamped-tail distribution (atoms at p5 and p95)."""
        xs, ps = self.values, self.probs
        body = np.sum(np.diff(ps) * 0.5 * (xs[1:] + xs[:-1]))
        return float(ps[0] * xs[0] + body + (1.0 - ps[-1]) * xs[-1])


def build_cdf(dist: PercentileDistribution) -> PiecewiseCdf:
    if not isinstance(dist, PercentileDistribution):
        dist = PercentileDistribution(dist)
    return PiecewiseCdf(values=dist.values, probs=PERCENTILES)


def sample(cdf: PiecewiseCdf, u):
    """Inverse-transform draw: deterministic in ``(cdf, u)``."""
    return cdf.ppf(u)


def quantile_of(cdf: PiecewiseCdf, value):
    return cdf.cdf(value)


def truncated_sample(cdf: PiecewiseCdf, q_lo, q_hi, u):
    """Draw restricted to the quantile window ``[q_lo, q_hi]``.

    Works elementwise on arrays. The window is mapped affinely so that
    ``(0, 1)`` reproduces ``sample(cdf, u)`` bit for bit.
    """
    q_lo = np.asarray(q_lo, dtype=float)
    q_hi = np.asarray(q_hi, dtype=float)
    if np.any(q_lo >= q_hi):
        raise DistributionError("degenerate quantile window: q_lo must be < q_hi")
    if np.any(q_lo < 0.0) or np.any(q_hi > 1.0):
        raise DistributionError("quantile window must lie inside [0, 1]")
    u = np.asarray(u, dtype=float)
    q = q_lo + u * (q_hi - q_lo)
    # guard against q_hi rounding a hair above 1.0
    q = np.minimum(q, q_hi)
    return cdf.ppf(q)


@dataclass(frozen=True)
class SampleSummary:
    mean: float
    std: float
    count: int
    percentiles: PercentileDistribution

    @property
    def median(self) -> float:
        return self.percentiles.median


def summarize(samples) -> SampleSummary:
    """Mean, population std and empirical 5th..95th percentiles of ``samples``."""
    arr = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    if arr.size == 0:
        raise DistributionError("cannot summarize an empty sample set")
    lo, hi = arr[0], arr[-1]
    mean = float(np.clip(arr.mean(), lo, hi))
    std = float(arr.std(ddof=0))
    pct = np.percentile(arr, PERCENTILES * 100.0, method="linear")
    # interpolation can leave 1-ulp inversions on tied samples
    pct = np.maximum.accumulate(pct)
    return SampleSummary(
        mean=mean,
        std=std,
        count=int(arr.size),
        percentiles=PercentileDistribution(pct, require_positive=False),
    )


def pool_percentiles(dists, weights=None, n_draws: int = 1000,
                     *, require_positive: bool = True) -> PercentileDistribution:
    """Merge distributions by stratified sampling, weighted by ``weights``.

    Each source contributes draws in proportion to its weight (its FCD sample
    size), taken at evenly spaced quantiles so the merge is deterministic.
    The pooled percentiles are the empirical percentiles of the merged draws.
    A single source is returned unchanged.
    """
    dists = [d if isinstance(d, PercentileDistribution) else PercentileDistribution(d) for d in dists]
    if not dists:
        raise DistributionError("nothing to pool")
    if len(dists) == 1:
        return dists[0]
    w = np.ones(len(dists)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(dists),) or np.any(w < 0) or not w.sum() > 0:
        raise DistributionError("pooling weights must be non-negative with a positive sum")
    counts = np.maximum(1, np.rint(n_draws * w / w.sum()).astype(int))
    draws = []
    for d, k, wk in zip(dists, counts, w):
        if wk == 0:
            continue
        u = (np.arange(k) + 0.5) / k
        draws.append(np.interp(u, PERCENTILES, d.values))
    merged = np.sort(np.concatenate(draws))
    pct = np.maximum.accumulate(np.percentile(merged, PERCENTILES * 100.0))
    return PercentileDistribution(pct, require_positive=require_positive)

"""Box-counting estimate of the dimension of the good-location set."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ExtinctReplicaError, ResolutionRangeError
from .frag_engine import FragmentationState, advance, initial_state, replica_stream
from .io import write_csv


@dataclass(frozen=True)
class DimensionReport:
    resolutions: np.ndarray
    counts: np.ndarray
    slope: float
    predicted: Optional[float]
    trend: tuple = ()

    def rows(self):
        return zip(self.resolutions, self.counts)


def default_resolutions(drift_v: float, horizon: float) -> np.ndarray:
    """``2^-k`` for ``k = 4 .. floor(v t / log 2) - 1``."""
    k_max = int(math.floor(drift_v * horizon / math.log(2.0))) - 1
    return 2.0 ** -np.arange(4, k_max + 1, dtype=float)


def box_count(left: np.ndarray, length: np.ndarray, eps: float) -> int:
    """Number of grid boxes ``[k eps, (k+1) eps)`` meeting the union of the
    open intervals ``(left, left + length)``."""
    if left.size == 0:
        return 0
    first = np.floor(left / eps)
    last = np.ceil((left + length) / eps) - 1
    order = np.argsort(first, kind="stable")
    first, last = first[order], np.maximum.accumulate(last[order])
    # merge overlapping box-index ranges
    new_run = np.ones(first.size, dtype=bool)
    new_run[1:] = first[1:] > last[:-1]
    starts = first[new_run]
    ends = np.append(last[np.flatnonzero(new_run)[1:] - 1], last[-1])
    return int(np.sum(ends - starts + 1))


def predicted_dimension(rho: float, drift_v: float) -> float:
    return 1.0 - rho / drift_v


def box_count_estimate(state: FragmentationState, resolutions: Optional[Sequence[float]] = None,
                       rho: Optional[float] = None, min_resolutions: int = 4) -> DimensionReport:
    good = state.good_mask()
    if not np.any(good):
        raise ExtinctReplicaError(f"no good intervals at t={state.clock:g}")
    left, length = state.left[good], state.length[good]
    if resolutions is None:
        resolutions = default_resolutions(state.model.drift_v, state.clock)
    eps = np.sort(np.asarray(resolutions, dtype=float))[::-1]
    floor = state.model.a * math.exp(-state.model.drift_v * state.clock)
    eps = eps[(eps <= 1.0) & (eps >= floor)]
    if eps.size < min_resolutions:
        raise ResolutionRangeError(
            f"{eps.size} usable resolutions in [{floor:.3g}, 1]; need {min_resolutions}")
    counts = np.array([box_count(left, length, e) for e in eps])
    slope = float(np.polyfit(np.log(1.0 / eps), np.log(counts), 1)[0])
    predicted = predicted_dimension(rho, state.model.drift_v) if rho is not None else None
    return DimensionReport(resolutions=eps, counts=counts, slope=slope, predicted=predicted)


@dataclass(frozen=True)
class HorizonSummary:
    horizon: float
    mean_slope: float
    std_slope: float
    n_survivors: int
    predicted: float

    @property
    def gap(self) -> float:
        return abs(self.mean_slope - self.predicted)


@dataclass(frozen=True)
class DimensionTrend:
    horizons: tuple
    summaries: tuple
    reports: dict = field(default_factory=dict)  # replica -> final-horizon report

    @property
    def gaps(self) -> list[float]:
        return [s.gap for s in self.summaries]

    @property
    def shrinking(self) -> bool:
        g = self.gaps
        return all(x > y for x, y in zip(g, g[1:]))


def dimension_trend(model, rho: float, horizons: Sequence[float], replicas: int, seed: int = 0,
                    activation_time: float = 0.0, population_cap: int = 10**7,
                    first: int = 0) -> DimensionTrend:
    """Per-replica estimates at increasing horizons from one incrementally
    advanced population, averaged over replicas that survive the last horizon."""
    horizons = tuple(sorted(float(h) for h in horizons))
    per_h = {h: [] for h in horizons}
    final = {}
    for r in range(first, first + replicas):
        state = initial_state(model, replica_stream(seed, r), activation_time, "corridor",
                              population_cap)
        slopes = []
        for h in horizons:
            state = advance(state, h)
            if len(state) == 0:
                break
            rep = box_count_estimate(state, rho=rho)
            slopes.append(rep.slope)
        if len(slopes) == len(horizons):
            for h, s in zip(horizons, slopes):
                per_h[h].append(s)
            final[r] = rep
    pred = predicted_dimension(rho, model.drift_v)
    summaries = []
    for h in horizons:
        s = np.array(per_h[h])
        summaries.append(HorizonSummary(
            horizon=h, mean_slope=float(s.mean()) if s.size else math.nan,
            std_slope=float(s.std(ddof=1)) if s.size > 1 else math.nan,
            n_survivors=int(s.size), predicted=pred))
    final = {r: DimensionReport(rep.resolutions, rep.counts, rep.slope, rep.predicted,
                                trend=tuple(per_h[h][i] for h in horizons))
             for i, (r, rep) in enumerate(final.items())}
    return DimensionTrend(horizons=horizons, summaries=tuple(summaries), reports=final)


def write_box_counts(report: DimensionReport, path) -> None:
    write_csv(path, "epsilon,box_count", report.rows())

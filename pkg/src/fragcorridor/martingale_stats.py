"""Good-interval counts, the additive martingale and the empirical measure."""
from __future__ import annotations

import logging
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ExtinctionError, InsufficientDataError, InsufficientSurvivorsError
from .frag_engine import FragmentationState, History, initial_state, advance, replica_stream
from .io import write_csv
from .levy_scale import ExitDensity, LevyModel, ScaleTable, exit_density, wq_interp

log = logging.getLogger(__name__)

N_BINS = 50
WORKERS_ENV = "FRAGCORRIDOR_WORKERS"


def default_probe(beta: float) -> Callable[[np.ndarray], np.ndarray]:
    """Smooth bounded test function on (0, beta)."""
    return lambda y: np.sin(np.pi * np.asarray(y) / beta) ** 2


def default_sample_times(horizon: float, n: int = 64) -> np.ndarray:
    """Uniform grid merged with the dyadic times ``horizon * 2^-k`` below it."""
    uniform = np.linspace(0.0, horizon, n)
    dyadic = horizon * 2.0 ** -np.arange(1, 8)
    return np.unique(np.round(np.concatenate([uniform, dyadic]), 12))


def count_good(state: FragmentationState) -> int:
    return int(state.good_mask().sum())


def count_window(state: FragmentationState) -> int:
    """Intervals inside the moving window at ``state.clock``, path constraint
    ignored. Needs a window or full mode state."""
    if state.mode == "corridor":
        raise ConfigurationError("count_window needs an unpruned (window/full) state")
    return int(state.window_mask().sum())


def _coordinates(model: LevyModel, t: float, length: np.ndarray) -> np.ndarray:
    return model.h_offset + model.drift_v * t + np.log(length)


def martingale_value(state: FragmentationState, table: ScaleTable) -> float:
    good = state.good_mask()
    if not np.any(good):
        return 0.0
    y = _coordinates(state.model, state.clock, state.length[good])
    h = wq_interp(table, y)
    h0 = float(wq_interp(table, table.h_offset))
    return float(math.exp(table.rho * state.clock) / h0 * np.sum(h * state.length[good]))


@dataclass(frozen=True, eq=False)
class TrajectoryStats:
    replica: int
    sample_times: np.ndarray
    n_good: np.ndarray
    M_values: np.ndarray
    probe_values: np.ndarray
    hist_times: np.ndarray
    sigma_histograms: np.ndarray  # (len(hist_times), N_BINS) sigma_t mass per bin
    zeta: float
    M_final: float
    n_window: Optional[np.ndarray] = None

    @property
    def survived(self) -> bool:
        return bool(self.n_good[-1] > 0)


def stats_from_history(history: History, model: LevyModel, table: ScaleTable,
                       sample_times, hist_times=(), replica: int = 0,
                       probe: Optional[Callable] = None, window: bool = False) -> TrajectoryStats:
    """Evaluate counts, M_t, probe integrals and sigma_t histograms at the
    sample times from a replica's interval records."""
    h = history.arrays()
    sample_times = np.asarray(sample_times, dtype=float)
    hist_times = np.asarray(hist_times, dtype=float)
    probe = probe or default_probe(table.beta)
    edges = np.linspace(0.0, table.beta, N_BINS + 1)
    h0 = float(wq_interp(table, table.h_offset))
    birth, good_end, end, length = h["birth"], h["good_end"], h["end"], h["length"]

    n_good = np.zeros(sample_times.size, dtype=np.int64)
    n_win = np.zeros(sample_times.size, dtype=np.int64) if window else None
    M = np.zeros(sample_times.size)
    A = np.zeros(sample_times.size)
    hists = np.zeros((hist_times.size, N_BINS))
    hist_pos = {float(t): i for i, t in enumerate(hist_times)}
    for i, t in enumerate(sample_times):
        born = birth <= t
        alive = born & (t < good_end)
        n_good[i] = int(alive.sum())
        if window:
            scaled = np.exp(model.drift_v * t) * length
            n_win[i] = int((born & (t < end) & (scaled > model.a) & (scaled < model.b)).sum())
        if n_good[i] == 0:
            continue
        y = _coordinates(model, t, length[alive])
        w = math.exp(table.rho * t) / h0 * wq_interp(table, y) * length[alive]
        M[i] = float(w.sum())
        A[i] = float(np.sum(w * probe(y)))
        if float(t) in hist_pos:
            hists[hist_pos[float(t)]] = np.histogram(y, bins=edges, weights=w)[0]
    for t in hist_times:
        if float(t) not in set(sample_times.tolist()):
            raise ConfigurationError("histogram times must be among the sample times")

    finite_end = good_end[np.isfinite(good_end)]
    if np.any(np.isinf(good_end)):
        zeta = math.inf
    else:
        zeta = float(finite_end.max()) if finite_end.size else 0.0
    return TrajectoryStats(replica=replica, sample_times=sample_times, n_good=n_good,
                           M_values=M, probe_values=A, hist_times=hist_times,
                           sigma_histograms=hists, zeta=zeta, M_final=float(M[-1]),
                           n_window=n_win)


def simulate_replica(replica: int, model: LevyModel, table: ScaleTable, horizon: float,
                     seed: int = 0, sample_times=None, hist_times=(),
                     activation_time: float = 0.0, population_cap: int = 10**7,
                     window: bool = False) -> TrajectoryStats:
    """One replica from its own stream. ``window=True`` runs the unpruned
    (look-ahead pruned) population so both counts come from one realization."""
    if sample_times is None:
        sample_times = default_sample_times(horizon)
    rng = replica_stream(seed, replica)
    mode = "window" if window else "corridor"
    state = initial_state(model, rng, activation_time, mode, population_cap)
    hist = History()
    advance(state, horizon, hist)
    return stats_from_history(hist, model, table, sample_times, hist_times, replica,
                              window=window)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def simulate_replicas(model: LevyModel, table: ScaleTable, replicas: int, horizon: float,
                      seed: int = 0, workers: Optional[int] = None, first: int = 0,
                      **kwargs) -> list[TrajectoryStats]:
    """Replicas ``first .. first+replicas-1`` in replica order, whatever the
    degree of parallelism."""
    workers = worker_count() if workers is None else workers
    job = partial(simulate_replica, model=model, table=table, horizon=horizon, seed=seed,
                  **kwargs)
    ids = range(first, first + replicas)
    if workers <= 1:
        return [job(r) for r in ids]
    # fork hands the job (with its closure-based measure) to workers unpickled
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=_install_job,
                             initargs=(job,)) as pool:
        return list(pool.map(_run_installed, ids, chunksize=max(1, replicas // (4 * workers))))


_JOB = None


def _install_job(job):
    global _JOB
    _JOB = job


def _run_installed(replica):
    return _JOB(replica)


# -- aggregation ---------------------------------------------------------------------

@dataclass(frozen=True)
class Aggregate:
    sample_times: np.ndarray
    mean_log_ngood: np.ndarray
    stderr_log_ngood: np.ndarray
    mean_M: np.ndarray
    stderr_M: np.ndarray
    second_moment_M: np.ndarray
    n_replicas: int
    n_survivors: int
    n_absorbed: int

    def rows(self):
        return zip(self.sample_times, self.mean_log_ngood, self.stderr_log_ngood,
                   self.mean_M, self.stderr_M, self.second_moment_M)


def _check_times(stats: Sequence[TrajectoryStats]) -> np.ndarray:
    if not stats:
        raise InsufficientDataError("no replicas")
    times = stats[0].sample_times
    for s in stats[1:]:
        if not np.array_equal(s.sample_times, times):
            raise ConfigurationError("replicas were sampled on different time grids")
    return times


def aggregate(stats: Sequence[TrajectoryStats]) -> Aggregate:
    """Unconditional M moments over all replicas; log counts over survivors
    (n_good > 0 at the horizon) only."""
    times = _check_times(stats)
    n = len(stats)
    M = np.array([s.M_values for s in stats])
    surv = [s for s in stats if s.survived]
    if surv:
        logs = np.log(np.array([s.n_good for s in surv], dtype=float))
        mean_log = logs.mean(axis=0)
        se_log = logs.std(axis=0, ddof=1) / math.sqrt(len(surv)) if len(surv) > 1 \
            else np.full(times.size, np.nan)
    else:
        mean_log = se_log = np.full(times.size, np.nan)
    return Aggregate(sample_times=times, mean_log_ngood=mean_log, stderr_log_ngood=se_log,
                     mean_M=M.mean(axis=0),
                     stderr_M=M.std(axis=0, ddof=1) / math.sqrt(n) if n > 1
                     else np.full(times.size, np.nan),
                     second_moment_M=(M ** 2).mean(axis=0), n_replicas=n,
                     n_survivors=len(surv), n_absorbed=sum(np.isfinite(s.zeta) for s in stats))


def write_aggregate(agg: Aggregate, path) -> None:
    write_csv(path, "t,mean_log_ngood,stderr,mean_M,stderr_M,second_moment_M", agg.rows())


# -- growth rate ----------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthFit:
    slope: float
    stderr: float
    ci_low: float
    ci_high: float
    oracle: float
    n_survivors: int
    window: tuple[float, float]

    @property
    def relative_error(self) -> float:
        return abs(self.slope - self.oracle) / abs(self.oracle)


def _fit_slopes(times, counts, window):
    sel = (times >= window[0] - 1e-12) & (times <= window[1] + 1e-12)
    if sel.sum() < 2:
        raise InsufficientDataError("fit window holds fewer than two sample times")
    x = times[sel]
    y = np.log(counts[:, sel].astype(float))
    xc = x - x.mean()
    per_replica = (y - y.mean(axis=1, keepdims=True)) @ xc / float(xc @ xc)
    mean_curve = y.mean(axis=0)
    slope = float(np.polyfit(x, mean_curve, 1)[0])
    n = counts.shape[0]
    se = float(per_replica.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return slope, se


def growth_rate_fit(stats: Sequence[TrajectoryStats], table: ScaleTable,
                    window: Optional[tuple[float, float]] = None, drift_v: Optional[float] = None,
                    min_survivors: int = 10, use_window_count: bool = False) -> GrowthFit:
    """Slope of the survivor-mean of ``log #G(t)`` on ``window`` (default the
    second half of the run). The CI is 95% from the spread of per-replica
    slopes, which share the same design so their mean equals the slope of the
    mean curve."""
    times = _check_times(stats)
    horizon = float(times[-1])
    window = window or (horizon / 2, horizon)
    if use_window_count:
        if stats[0].n_window is None:
            raise ConfigurationError("window counts were not recorded")
        sel = (times >= window[0] - 1e-12) & (times <= window[1] + 1e-12)
        surv = [s for s in stats if np.all(s.n_window[sel] > 0)]
        counts = lambda s: s.n_window  # noqa: E731
    else:
        surv = [s for s in stats if s.survived]
        counts = lambda s: s.n_good  # noqa: E731
    if not surv:
        raise ExtinctionError(f"all {len(stats)} replicas were absorbed before t={horizon:g}")
    if len(surv) < min_survivors:
        raise InsufficientSurvivorsError(
            f"{len(surv)} surviving replicas, need at least {min_survivors}")
    if len(surv) < 100:
        log.warning("growth fit on %d survivors; 100 or more recommended", len(surv))
    slope, se = _fit_slopes(times, np.array([counts(s) for s in surv]), window)
    v = drift_v if drift_v is not None else table.drift_v
    return GrowthFit(slope=slope, stderr=se, ci_low=slope - 1.96 * se, ci_high=slope + 1.96 * se,
                     oracle=v - table.rho, n_survivors=len(surv), window=window)


def extinction_horizon(table: ScaleTable, model: LevyModel, replicas: int,
                       miss_probability: float = 0.01) -> float:
    """Time after which all ``replicas`` are absorbed with probability at least
    ``1 - miss_probability`` when rho > v.

    Uses ``P(zeta > t) <= E[#G(t)] ~ K e^{-(rho - v) t}`` with the many-to-one
    constant ``K = (1/a) * E_h0[e^{-Y}]`` under the quasi-stationary limit.
    """
    gap = table.rho - model.drift_v
    if gap <= 0:
        raise ConfigurationError("extinction horizon needs rho > v")
    dens = exit_density(table)
    h0 = float(wq_interp(table, table.h_offset))
    # E[#G(t)] = e^{vt}/a E[e^{-Y_t}; T>t] ~ e^{(v-rho)t} h0 /a * int e^{-y} W(beta-y) c dy
    k = h0 / model.a * dens.c * float(np.trapezoid(np.exp(-table.grid) * table.values_Wq[::-1],
                                                   table.grid))
    k = max(k, 1.0)
    return float(math.log(replicas * k / miss_probability) / gap)


# -- empirical measure ----------------------------------------------------------------

@dataclass(frozen=True)
class SigmaDistance:
    l1: float
    time: float
    edges: np.ndarray
    mass: np.ndarray
    oracle_mass: np.ndarray
    n_survivors: int
    probe_variance: dict = field(default_factory=dict)

    def rows(self, density: ExitDensity):
        mids = 0.5 * (self.edges[1:] + self.edges[:-1])
        return zip(self.edges[:-1], self.edges[1:], self.mass, density(mids))


def probe_variance(stats: Sequence[TrajectoryStats], table: ScaleTable,
                   times: Sequence[float], probe: Optional[Callable] = None) -> dict:
    """Cross-replica variance of ``sigma_t(f) - M_t * rho(f)`` at ``times``."""
    sample_times = _check_times(stats)
    probe = probe or default_probe(table.beta)
    target = exit_density(table).integrate(probe)
    out = {}
    for t in times:
        i = int(np.argmin(np.abs(sample_times - t)))
        if abs(sample_times[i] - t) > 1e-9:
            raise ConfigurationError(f"t={t} is not a sample time")
        dev = np.array([s.probe_values[i] - s.M_values[i] * target for s in stats])
        out[float(t)] = float(dev.var(ddof=1))
    return out


def sigma_histogram_distance(stats: Sequence[TrajectoryStats], table: ScaleTable,
                             time: Optional[float] = None,
                             variance_times: Sequence[float] = ()) -> SigmaDistance:
    """L1 distance between the normalized replica-averaged sigma_t histogram
    and the exit density integrated over the same bins."""
    if not stats or stats[0].hist_times.size == 0:
        raise InsufficientDataError("no histograms were recorded")
    hist_times = stats[0].hist_times
    time = float(hist_times[-1]) if time is None else float(time)
    j = int(np.argmin(np.abs(hist_times - time)))
    surv = [s for s in stats if s.survived]
    total = np.sum([s.sigma_histograms[j] for s in surv], axis=0) if surv else np.zeros(N_BINS)
    mass = float(np.sum(total))
    if mass <= 0:
        raise InsufficientDataError("empty sigma_t histogram")
    if len(surv) < 1000:
        log.warning("sigma_t histogram from %d survivors; 1000 or more recommended", len(surv))
    edges = np.linspace(0.0, table.beta, N_BINS + 1)
    oracle = exit_density(table).bin_masses(edges)
    normalized = total / mass
    l1 = float(np.sum(np.abs(normalized - oracle)))
    pv = probe_variance(stats, table, variance_times) if len(variance_times) else {}
    return SigmaDistance(l1=l1, time=float(hist_times[j]), edges=edges, mass=normalized,
                         oracle_mass=oracle, n_survivors=len(surv), probe_variance=pv)


def write_histogram(dist: SigmaDistance, table: ScaleTable, path) -> None:
    write_csv(path, "bin_left,bin_right,mass,density_oracle", dist.rows(exit_density(table)))

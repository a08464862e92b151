"""Exact event-driven simulation of the interval fragmentation.

Lengths are constant between dislocations, so an interval's corridor fate is
decided at birth: it either splits at its exponential clock or leaves the
corridor at the deterministic time solving ``e^{v s} |I| = b``. Intervals are
processed generation by generation with numpy; per-replica streams make every
run reproducible from ``(seed, replica)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, InsufficientDataError, PopulationOverflow
from .levy_scale import LevyModel, ScaleTable, wq_interp

MODES = ("corridor", "window", "full")

# history fate codes
ALIVE, SPLIT, EXIT, DISCARD = 0, 1, 2, 3
_FATE_NAMES = {SPLIT: "split", EXIT: "exit", DISCARD: "discard"}


def replica_stream(seed: int, replica: int, substream: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, replica, substream)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replica), int(substream)))
    return np.random.Generator(np.random.Philox(ss))


def sample_split(measure, rng: np.random.Generator) -> np.ndarray:
    """One dislocation: ordered child fractions summing to 1."""
    return measure.sample(rng, 1)[0]


@dataclass(frozen=True)
class Interval:
    left: float
    length: float
    birth_time: float
    corridor_exit_time: float


@dataclass
class FragmentationState:
    """Live population at ``clock``.

    ``mode="corridor"`` keeps only good intervals. ``"window"`` keeps every
    interval that can still reach the moving window before the horizon of the
    last ``advance`` and tracks goodness as a flag; ``"full"`` prunes nothing.
    """

    model: LevyModel
    rng: np.random.Generator
    clock: float = 0.0
    left: np.ndarray = field(default_factory=lambda: np.zeros(1))
    length: np.ndarray = field(default_factory=lambda: np.ones(1))
    birth: np.ndarray = field(default_factory=lambda: np.zeros(1))
    split_time: np.ndarray = field(default_factory=lambda: np.full(1, np.nan))
    good: np.ndarray = field(default_factory=lambda: np.ones(1, dtype=bool))
    activation_time: float = 0.0
    mode: str = "corridor"
    population_cap: int = 10**7

    def __len__(self) -> int:
        return int(self.length.size)

    def corridor_exit_time(self) -> np.ndarray:
        m = self.model
        return np.log(m.b / self.length) / m.drift_v

    @property
    def live(self) -> list[Interval]:
        exits = self.corridor_exit_time()
        return [Interval(float(l), float(x), float(t), float(e))
                for l, x, t, e in zip(self.left, self.length, self.birth, exits)]

    def good_mask(self) -> np.ndarray:
        """Good intervals at ``clock``."""
        if self.mode == "corridor":
            return np.ones(len(self), dtype=bool)
        kill = _kill_times(self.model, self.length, self.birth, self.activation_time)
        return self.good & (kill > self.clock)

    def window_mask(self) -> np.ndarray:
        m = self.model
        scaled = np.exp(m.drift_v * self.clock) * self.length
        return (scaled > m.a) & (scaled < m.b)


def initial_state(model: LevyModel, rng: np.random.Generator, activation_time: float = 0.0,
                  mode: str = "corridor", population_cap: int = 10**7) -> FragmentationState:
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}")
    if activation_time < 0:
        raise ConfigurationError("activation_time must be nonnegative")
    split = rng.exponential(1.0 / model.measure.total_rate, 1)
    return FragmentationState(model=model, rng=rng, split_time=split,
                              activation_time=float(activation_time), mode=mode,
                              population_cap=int(population_cap))


def _kill_times(model, length, birth, activation_time):
    """End of goodness ignoring splits: the upward corridor exit, or the
    check time ``max(birth, t')`` when the interval is outside the corridor
    there."""
    v, a, b = model.drift_v, model.a, model.b
    check = np.maximum(birth, activation_time)
    scaled = np.exp(v * check) * length
    inside = (scaled > a) & (scaled < b)
    return np.where(inside, np.log(b / length) / v, check)


class History:
    """Per-interval records accumulated by ``advance``."""

    _FIELDS = ("left", "length", "birth", "end", "good_end", "fate")

    def __init__(self):
        self._chunks = {k: [] for k in self._FIELDS}

    def record(self, **arrays):
        for k in self._FIELDS:
            self._chunks[k].append(np.asarray(arrays[k]))

    def arrays(self) -> dict:
        out = {}
        for k in self._FIELDS:
            parts = self._chunks[k]
            dtype = np.int8 if k == "fate" else float
            out[k] = np.concatenate(parts).astype(dtype) if parts else np.empty(0, dtype)
        return out

    def __len__(self):
        return sum(p.size for p in self._chunks["birth"])

    def event_log(self) -> list[tuple[float, str, float, float]]:
        """Time-ordered ``(t, event, left, length)`` rows.

        Every kept interval contributes a ``birth`` row (the root at t=0 too)
        and, if it ended before the horizon, a ``split`` or ``exit`` row;
        children rejected at birth give a single ``discard`` row.
        """
        h = self.arrays()
        rows = []
        for left, length, birth, end, fate in zip(h["left"], h["length"], h["birth"],
                                                   h["end"], h["fate"]):
            if fate == DISCARD:
                rows.append((birth, 2, "discard", left, length))
                continue
            rows.append((birth, 1, "birth", left, length))
            if fate in (SPLIT, EXIT):
                rows.append((end, 0, _FATE_NAMES[int(fate)], left, length))
        rows.sort(key=lambda r: (r[0], r[1], r[3]))
        return [(float(t), name, float(l), float(x)) for t, _, name, l, x in rows]


def advance(state: FragmentationState, horizon: float,
            history: Optional[History] = None) -> FragmentationState:
    """Process every event in ``(clock, horizon]`` and return the new state."""
    if horizon < state.clock:
        raise DomainError(f"horizon {horizon} precedes the clock {state.clock}")
    model = state.model
    measure = model.measure
    v, a = model.drift_v, model.a
    rng = state.rng
    tp = state.activation_time
    mean_wait = 1.0 / measure.total_rate
    corridor = state.mode == "corridor"

    left, length, birth = state.left, state.length, state.birth
    split, good = state.split_time, state.good
    fresh = np.isnan(split)
    if np.any(fresh):
        split = split.copy()
        split[fresh] = birth[fresh] + rng.exponential(mean_wait, int(fresh.sum()))

    kept = []
    n_kept = 0
    while length.size:
        kill = _kill_times(model, length, birth, tp)
        good_end = np.where(good, np.minimum(split, kill), birth)
        if corridor:
            does_split = split < np.minimum(kill, horizon)
            does_exit = ~does_split & (kill <= horizon)
        else:
            does_split = split < horizon
            does_exit = np.zeros(length.size, dtype=bool)
        stays = ~(does_split | does_exit)

        if history is not None:
            end = np.where(does_split, split, np.where(does_exit, kill, np.inf))
            fate = np.where(does_split, SPLIT, np.where(does_exit, EXIT, ALIVE))
            history.record(left=left, length=length, birth=birth, end=end,
                           good_end=np.where(good_end > horizon, np.inf, good_end)
                           if not corridor else end, fate=fate)

        if np.any(stays):
            kept.append((left[stays], length[stays], birth[stays], split[stays], good[stays]))
            n_kept += int(stays.sum())

        parents = np.flatnonzero(does_split)
        if parents.size == 0:
            break
        u = measure.sample(rng, parents.size)
        k = u.shape[1]
        p_len = length[parents][:, None]
        c_len = (p_len * u).ravel()
        c_left = (left[parents][:, None] + p_len * (np.cumsum(u, axis=1) - u)).ravel()
        c_birth = np.repeat(split[parents], k)
        # goodness survives a split only if the parent was still good then
        parent_good = good[parents] & (split[parents] < kill[parents])
        c_scaled = np.exp(v * c_birth) * c_len
        c_good = np.repeat(parent_good, k) & ((c_birth < tp) | (c_scaled > a))

        if corridor:
            keep = c_good
        elif state.mode == "window":
            keep = np.exp(v * horizon) * c_len > a
        else:
            keep = np.ones(c_len.size, dtype=bool)

        if history is not None and not np.all(keep):
            drop = ~keep
            history.record(left=c_left[drop], length=c_len[drop], birth=c_birth[drop],
                           end=c_birth[drop], good_end=c_birth[drop],
                           fate=np.full(int(drop.sum()), DISCARD))

        left, length, birth = c_left[keep], c_len[keep], c_birth[keep]
        good = c_good[keep]
        split = birth + rng.exponential(mean_wait, birth.size)
        if n_kept + length.size > state.population_cap:
            reached = float(birth.min()) if birth.size else horizon
            raise PopulationOverflow(
                f"population exceeded {state.population_cap} intervals near t={reached:.4g}",
                reached,
            )

    if kept:
        cols = [np.concatenate(c) for c in zip(*kept)]
    else:
        cols = [np.empty(0), np.empty(0), np.empty(0), np.empty(0), np.empty(0, dtype=bool)]
    return replace(state, clock=float(horizon), left=cols[0], length=cols[1],
                   birth=cols[2], split_time=cols[3], good=cols[4].astype(bool))


def simulate(model: LevyModel, horizon: float, seed: int = 0, replica: int = 0,
             activation_time: float = 0.0, mode: str = "corridor",
             population_cap: int = 10**7, history: Optional[History] = None
             ) -> FragmentationState:
    rng = replica_stream(seed, replica)
    state = initial_state(model, rng, activation_time, mode, population_cap)
    return advance(state, horizon, history)


def write_event_log(history: History, path) -> None:
    from .io import atomic_write_text, fmt

    lines = ["t,event,interval_left,interval_length"]
    for t, name, left, length in history.event_log():
        lines.append(f"{fmt(t)},{name},{fmt(left)},{fmt(length)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# -- tagged fragment ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TaggedPath:
    """Path of the fragment containing an independent uniform point.

    ``xi_values[i]`` holds on ``[jump_times[i], jump_times[i+1])``;
    ``D_values[i]`` is the martingale just after ``jump_times[i]``.
    """

    jump_times: np.ndarray
    xi_values: np.ndarray
    D_values: Optional[np.ndarray]
    exit_time: float
    horizon: float
    drift_v: float
    h_offset: float
    beta: float
    table: Optional[ScaleTable] = None

    def xi(self, t) -> np.ndarray:
        idx = np.searchsorted(self.jump_times, np.asarray(t, dtype=float), side="right") - 1
        return self.xi_values[idx]

    def Y(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.h_offset + self.drift_v * t - self.xi(t)

    def D(self, t) -> np.ndarray:
        if self.table is None:
            raise ConfigurationError("D_t needs a ScaleTable")
        t = np.asarray(t, dtype=float)
        tab = self.table
        live = t < self.exit_time
        val = np.exp(tab.rho * t) * wq_interp(tab, self.Y(t)) / wq_interp(tab, self.h_offset)
        return np.where(live, val, 0.0)


def _exit_time(jump_times, xi_values, v, h_offset, beta, horizon):
    """First exit of ``Y`` from (0, beta): upward creeping or a jump below 0."""
    y_start = h_offset + v * jump_times - xi_values
    seg_end = np.append(jump_times[1:], horizon)
    for i in range(jump_times.size):
        if i > 0 and y_start[i] <= 0.0:
            return float(jump_times[i])
        t_up = jump_times[i] + (beta - y_start[i]) / v
        if t_up <= seg_end[i]:
            return float(t_up)
    return math.inf


def tagged_trajectory(model: LevyModel, horizon: float, rng: np.random.Generator,
                      table: Optional[ScaleTable] = None, martingale: bool = True) -> TaggedPath:
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    if martingale and (table is None or not table.complete):
        raise ConfigurationError("the martingale D_t needs a completed ScaleTable")
    measure = model.measure
    times = [0.0]
    xis = [0.0]
    t, xi = 0.0, 0.0
    mean_wait = 1.0 / measure.total_rate
    while True:
        t += rng.exponential(mean_wait)
        if t > horizon:
            break
        u = sample_split(measure, rng)
        j = min(int(np.searchsorted(np.cumsum(u), rng.random(), side="right")), u.size - 1)
        xi -= math.log(u[j])
        times.append(t)
        xis.append(xi)
    jt = np.array(times)
    xv = np.array(xis)
    t_exit = _exit_time(jt, xv, model.drift_v, model.h_offset, model.beta, horizon)
    path = TaggedPath(jump_times=jt, xi_values=xv, D_values=None, exit_time=t_exit,
                      horizon=float(horizon), drift_v=model.drift_v,
                      h_offset=model.h_offset, beta=model.beta, table=table)
    if martingale:
        path = replace(path, D_values=path.D(jt))
    return path


def _size_biased_log_fraction(measure, rng, n):
    u = measure.sample(rng, n)
    pick = rng.random(n)[:, None] < np.cumsum(u, axis=1)
    j = np.minimum(np.argmax(pick, axis=1), u.shape[1] - 1)
    return np.log(u[np.arange(n), j])


def tagged_batch(model: LevyModel, n: int, times: Sequence[float], rng: np.random.Generator,
                 y0: Optional[np.ndarray] = None, t0: float = 0.0):
    """Vectorized tagged paths from ``t0``: returns ``(Y at times, exit times)``.

    ``Y`` keeps evolving after the exit; exit times beyond ``times[-1]`` are inf.
    """
    times = np.asarray(times, dtype=float)
    measure = model.measure
    v, beta = model.drift_v, model.beta
    horizon = float(times[-1])
    y = np.full(n, model.h_offset) if y0 is None else np.array(y0, dtype=float)
    t = np.full(n, float(t0))
    exit_t = np.full(n, np.inf)
    y_at = np.empty((n, times.size))
    active = np.arange(n)
    mean_wait = 1.0 / measure.total_rate
    while active.size:
        tc, yc = t[active], y[active]
        t_next = tc + rng.exponential(mean_wait, active.size)
        # sample times inside [tc, t_next) see the linear drift segment
        lo = np.searchsorted(times, tc, side="left")
        hi = np.searchsorted(times, t_next, side="left")
        for i in np.flatnonzero(hi > lo):
            sl = slice(lo[i], hi[i])
            y_at[active[i], sl] = yc[i] + v * (times[sl] - tc[i])
        t_up = tc + (beta - yc) / v
        up = np.isinf(exit_t[active]) & (yc > 0) & (t_up <= np.minimum(t_next, horizon))
        exit_t[active[up]] = t_up[up]
        going = t_next <= horizon
        idx = active[going]
        y_new = yc[going] + v * (t_next[going] - tc[going]) \
            + _size_biased_log_fraction(measure, rng, idx.size)
        down = np.isinf(exit_t[idx]) & (y_new <= 0)
        exit_t[idx[down]] = t_next[going][down]
        y[idx] = y_new
        t[idx] = t_next[going]
        active = idx
    return y_at, exit_t


@dataclass(frozen=True)
class SurvivalCurve:
    times: np.ndarray
    survival: np.ndarray
    survival_stderr: np.ndarray
    mean_D: np.ndarray
    stderr_D: np.ndarray
    replicas: int
    method: str
    # survivors at the last time, weighted so that sum(w f(y)) estimates E[f(Y_t); T > t]
    final_positions: np.ndarray = field(default_factory=lambda: np.empty(0))
    final_weights: np.ndarray = field(default_factory=lambda: np.empty(0))

    def decay_rate(self, t_lo: float, t_hi: float) -> tuple[float, float]:
        """Least-squares slope of ``log P(T > t)`` on ``[t_lo, t_hi]`` and its
        standard error from the fit residuals."""
        sel = (self.times >= t_lo - 1e-12) & (self.times <= t_hi + 1e-12)
        s = self.survival[sel]
        if sel.sum() < 3 or np.any(s <= 0):
            raise InsufficientDataError(
                f"survival estimate vanishes inside [{t_lo}, {t_hi}]; too few replicas"
            )
        x = self.times[sel]
        coef, cov = np.polyfit(x, np.log(s), 1, cov=True)
        return float(coef[0]), float(math.sqrt(cov[0, 0]))


def killed_survival_curve(model: LevyModel, table: ScaleTable, horizon: float,
                          replicas: int, rng: np.random.Generator,
                          times: Optional[Sequence[float]] = None, method: str = "plain",
                          batches: int = 40, stage: float = 0.25) -> SurvivalCurve:
    """Survival ``P(T > t)`` and mean ``D_t`` of Y killed outside (0, beta).

    ``method="plain"`` runs independent tagged paths. ``"splitting"`` keeps the
    particle count fixed by resampling survivors every ``stage`` time units
    (Fleming-Viot); the product of stage survival fractions is an unbiased
    estimate of ``P(T > t)`` that stays usable where plain sampling has no
    survivors left. Standard errors for splitting come from ``batches``
    independent particle systems.
    """
    if times is None:
        times = np.linspace(0.0, horizon, 65)
    times = np.asarray(times, dtype=float)
    if not table.complete:
        raise ConfigurationError("killed_survival_curve needs a completed ScaleTable")
    w0 = float(wq_interp(table, model.h_offset))
    growth = np.exp(table.rho * times)

    if method == "plain":
        y_at, exit_t = tagged_batch(model, replicas, times, rng)
        alive = exit_t[:, None] > times[None, :]
        surv = alive.mean(axis=0)
        d = np.where(alive, growth * wq_interp(table, y_at) / w0, 0.0)
        last = alive[:, -1]
        return SurvivalCurve(times=times, survival=surv,
                             survival_stderr=np.sqrt(surv * (1 - surv) / replicas),
                             mean_D=d.mean(axis=0),
                             stderr_D=d.std(axis=0, ddof=1) / math.sqrt(replicas),
                             replicas=replicas, method=method,
                             final_positions=y_at[last, -1],
                             final_weights=np.full(int(last.sum()), 1.0 / replicas))
    if method != "splitting":
        raise ConfigurationError(f"unknown method {method!r}")

    per = replicas // batches
    if per < 2:
        raise ConfigurationError("splitting needs at least 2 particles per batch")
    stage_times = np.union1d(np.arange(0.0, horizon, stage), times)
    stage_times = stage_times[stage_times <= horizon]
    surv_b = np.empty((batches, times.size))
    d_b = np.empty((batches, times.size))
    pos = {float(t): i for i, t in enumerate(times)}
    final_y, final_w = [], []
    for bi in range(batches):
        y = np.full(per, model.h_offset)
        log_p = 0.0
        dead = False
        if 0.0 in pos:
            surv_b[bi, pos[0.0]] = 1.0
            d_b[bi, pos[0.0]] = 1.0
        for t0, t1 in zip(stage_times[:-1], stage_times[1:]):
            if dead:
                if float(t1) in pos:
                    surv_b[bi, pos[float(t1)]] = 0.0
                    d_b[bi, pos[float(t1)]] = 0.0
                continue
            y_at, exit_t = tagged_batch(model, per, [t1], rng, y0=y, t0=t0)
            ok = np.isinf(exit_t)
            if not np.any(ok):
                dead = True
                p_t = 0.0
                mean_w = 0.0
            else:
                log_p += math.log(ok.mean())
                p_t = math.exp(log_p)
                y_ok = y_at[ok, 0]
                mean_w = float(np.mean(wq_interp(table, y_ok)))
                y = y_ok[rng.integers(0, y_ok.size, per)]
            if float(t1) in pos:
                i = pos[float(t1)]
                surv_b[bi, i] = p_t
                d_b[bi, i] = math.exp(table.rho * t1) * p_t * mean_w / w0
        if not dead:
            final_y.append(y_ok)
            final_w.append(np.full(y_ok.size, p_t / (y_ok.size * batches)))
    root_b = math.sqrt(batches)
    return SurvivalCurve(times=times, survival=surv_b.mean(axis=0),
                         survival_stderr=surv_b.std(axis=0, ddof=1) / root_b,
                         mean_D=d_b.mean(axis=0), stderr_D=d_b.std(axis=0, ddof=1) / root_b,
                         replicas=per * batches, method=method,
                         final_positions=np.concatenate(final_y) if final_y else np.empty(0),
                         final_weights=np.concatenate(final_w) if final_w else np.empty(0))

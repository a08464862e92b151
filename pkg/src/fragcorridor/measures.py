"""Finite-activity dislocation measures and the moment function kappa.

A dislocation measure is represented by its total rate and a vectorized
split sampler. The catalog measures also carry closed forms for kappa, its
derivative and the tail ``Lbar(y) = L((y, inf))`` of the Levy measure of the
tagged-fragment subordinator, where ``L(dx) = e^{-x} sum_j nu(-log u_j in dx)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special

from .errors import (
    DivergenceError,
    IllConditionedError,
    MeasureContractError,
    UnsupportedMeasureError,
)

Sampler = Callable[[np.random.Generator, int], np.ndarray]

MC_SAMPLES = 10**6
_TINY = 2.0**-53


@dataclass(frozen=True, eq=False)
class DislocationMeasure:
    """A conservative, finite-activity splitting law.

    ``sampler(rng, n)`` returns an ``(n, arity)`` array of child fractions in
    left-to-right order. ``moment_fn(q)`` evaluates
    ``int (1 - sum_j u_j^{q+1}) nu(dU)`` exactly; when it is ``None`` kappa
    falls back to Monte Carlo over the sampler.
    """

    name: str
    total_rate: float
    arity: int
    sampler: Sampler
    moment_fn: Optional[Callable[[float], float]] = None
    kappa_prime_fn: Optional[Callable[[float], float]] = None
    tail_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    p_lower_probe: float = -1.0
    p_lower_resolution: float = float("nan")
    conservative: bool = True
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.total_rate > 0):
            raise UnsupportedMeasureError(f"{self.name}: total rate must be positive")
        if not math.isfinite(self.total_rate):
            raise UnsupportedMeasureError(
                f"{self.name}: infinite-activity measures cannot be simulated exactly"
            )
        if self.arity < 2:
            raise MeasureContractError(f"{self.name}: a split needs at least 2 fragments")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = np.asarray(self.sampler(rng, n), dtype=float)
        check_splits(u, self.name)
        return u

    def describe(self) -> dict:
        # finite total mass: any infinite small-dislocation mass condition fails
        return {"name": self.name, "total_rate": self.total_rate, "finite_activity": True,
                "p_lower": self.p_lower_probe, **self.params}


def check_splits(u: np.ndarray, name: str = "measure") -> None:
    """Raise ``MeasureContractError`` unless every row tiles (0, 1)."""
    if u.ndim != 2 or u.shape[1] < 2:
        raise MeasureContractError(f"{name}: splits must be an (n, k>=2) array, got {u.shape}")
    if u.size == 0:
        return
    if not (np.all(u > 0.0) and np.all(u < 1.0)):
        raise MeasureContractError(f"{name}: fractions must lie in (0, 1)")
    if np.max(np.abs(u.sum(axis=1) - 1.0)) > 1e-12:
        raise MeasureContractError(f"{name}: fractions do not sum to 1")


# -- catalog -----------------------------------------------------------------

def binary_uniform(rate: float = 1.0) -> DislocationMeasure:
    """Split at an independent uniform point: fragments ``(V, 1 - V)``."""
    rate = float(rate)

    def sampler(rng, n):
        v = np.clip(rng.random(n), _TINY, 1.0 - _TINY)
        return np.column_stack([v, 1.0 - v])

    def moment(q):
        return rate * q / (q + 2.0)

    def kappa_prime(q):
        return 2.0 * rate / (q + 2.0) ** 2

    def tail(y):
        y = np.asarray(y, dtype=float)
        return rate * np.exp(-2.0 * np.maximum(y, 0.0))

    return _finish(DislocationMeasure(
        name="binary-uniform", total_rate=rate, arity=2, sampler=sampler,
        moment_fn=moment, kappa_prime_fn=kappa_prime, tail_fn=tail,
        params={"rate": rate},
    ))


def deterministic_split(fraction: float = 0.5, rate: float = 1.0) -> DislocationMeasure:
    """Always split into ``(p, 1 - p)``; ``p = 1/2`` is deterministic halving."""
    p = float(fraction)
    rate = float(rate)
    if not 0.0 < p < 1.0:
        raise MeasureContractError("split fraction must lie in (0, 1)")
    fracs = np.array([p, 1.0 - p])

    def sampler(rng, n):
        return np.tile(fracs, (n, 1))

    def moment(q):
        return rate * (1.0 - p ** (q + 1.0) - (1.0 - p) ** (q + 1.0))

    def kappa_prime(q):
        return -rate * (p ** (q + 1.0) * math.log(p)
                        + (1.0 - p) ** (q + 1.0) * math.log1p(-p))

    def tail(y):
        y = np.asarray(y, dtype=float)
        return rate * (p * (y < -math.log(p)) + (1.0 - p) * (y < -math.log1p(-p)))

    return _finish(DislocationMeasure(
        name="deterministic", total_rate=rate, arity=2, sampler=sampler,
        moment_fn=moment, kappa_prime_fn=kappa_prime, tail_fn=tail,
        params={"rate": rate, "fraction": p},
    ))


def deterministic_halving(rate: float = 1.0) -> DislocationMeasure:
    return deterministic_split(0.5, rate)


def dirichlet_split(alphas, rate: float = 1.0, name: str = "dirichlet") -> DislocationMeasure:
    """Fractions drawn from a Dirichlet law with the given parameters."""
    alphas = np.asarray(alphas, dtype=float)
    if alphas.ndim != 1 or alphas.size < 2 or np.any(alphas <= 0):
        raise MeasureContractError("Dirichlet parameters must be >= 2 positive reals")
    rate = float(rate)
    total = float(alphas.sum())

    def sampler(rng, n):
        u = rng.dirichlet(alphas, n)
        if np.any(u <= 0.0):
            # underflow for small parameters; keep the row on the open simplex
            u = np.maximum(u, _TINY)
            u /= u.sum(axis=1, keepdims=True)
        return u

    def _moments(s):
        return np.exp(special.gammaln(total) + special.gammaln(alphas + s)
                      - special.gammaln(alphas) - special.gammaln(total + s))

    def moment(q):
        return rate * (1.0 - float(np.sum(_moments(q + 1.0))))

    def kappa_prime(q):
        s = q + 1.0
        dm = _moments(s) * (special.digamma(alphas + s) - special.digamma(total + s))
        return -rate * float(np.sum(dm))

    def tail(y):
        y = np.asarray(y, dtype=float)
        z = np.exp(-np.maximum(y, 0.0))[..., None]
        parts = (alphas / total) * special.betainc(alphas + 1.0, total - alphas, z)
        return rate * parts.sum(axis=-1)

    return _finish(DislocationMeasure(
        name=name, total_rate=rate, arity=alphas.size, sampler=sampler,
        moment_fn=moment, kappa_prime_fn=kappa_prime, tail_fn=tail,
        params={"rate": rate, "alphas": [float(x) for x in alphas]},
    ))


def ternary_dirichlet(alphas=(1.0, 1.0, 1.0), rate: float = 1.0) -> DislocationMeasure:
    if len(alphas) != 3:
        raise MeasureContractError("ternary-Dirichlet needs exactly 3 parameters")
    return dirichlet_split(alphas, rate, name="ternary-dirichlet")


def from_sampler(name: str, rate: float, arity: int, sampler: Sampler,
                 p_lower: float = -1.0) -> DislocationMeasure:
    """Measure known only through its sampler; kappa and the tail use Monte Carlo.

    ``p_lower`` cannot be probed reliably from samples and is taken as given.
    """
    return DislocationMeasure(name=name, total_rate=float(rate), arity=int(arity),
                              sampler=sampler, p_lower_probe=float(p_lower))


CATALOG = {
    "binary-uniform": binary_uniform,
    "deterministic": deterministic_split,
    "ternary-dirichlet": ternary_dirichlet,
}


def _finish(measure: DislocationMeasure) -> DislocationMeasure:
    p_lower, resolution = probe_p_lower(measure)
    object.__setattr__(measure, "p_lower_probe", p_lower)
    object.__setattr__(measure, "p_lower_resolution", resolution)
    return measure


# -- moments -----------------------------------------------------------------

def probe_p_lower(measure: DislocationMeasure) -> tuple[float, float]:
    """Probe the left end of the finiteness domain of kappa.

    ``int sum_j u_j^{q+1} nu(dU)`` is finite iff ``e^{-q x}`` is integrable
    against ``L``, i.e. iff ``-q`` is below the exponential decay rate of the
    tail ``Lbar``. The rate is read off on the geometric grid ``x = 1..64``;
    a tail that vanishes on the grid means compact support and ``-inf``.
    Returns ``(p_lower, resolution)``, the resolution being the change of the
    decay estimate between the last two grid doublings.
    """
    if measure.tail_fn is None:
        return measure.p_lower_probe, float("nan")
    xs = 2.0 ** np.arange(0, 7)
    vals = np.asarray(measure.tail_fn(xs), dtype=float)
    if np.any(vals <= 0.0):
        return -math.inf, 0.0
    logs = np.log(vals)
    rates = -np.diff(logs) / np.diff(xs)
    return -float(rates[-1]), float(abs(rates[-1] - rates[-2]))


def _require_supported(measure: DislocationMeasure, q: float) -> None:
    if not measure.conservative:
        raise UnsupportedMeasureError(f"{measure.name}: only conservative measures are supported")
    if not q > measure.p_lower_probe:
        raise DivergenceError(
            f"kappa({q}) diverges: q must exceed p_lower ~ {measure.p_lower_probe:.6g}"
        )


def kappa_mc(measure: DislocationMeasure, q: float, n: int = MC_SAMPLES,
             seed: int = 0) -> tuple[float, float]:
    """Monte Carlo estimate of kappa(q) with its standard error."""
    _require_supported(measure, q)
    rng = np.random.default_rng(seed)
    u = measure.sample(rng, n)
    vals = measure.total_rate * (1.0 - np.sum(u ** (q + 1.0), axis=1))
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


def kappa(measure: DislocationMeasure, q: float) -> float:
    _require_supported(measure, q)
    if measure.moment_fn is not None:
        return float(measure.moment_fn(q))
    return kappa_mc(measure, q)[0]


def kappa_derivative(measure: DislocationMeasure, q: float) -> float:
    """kappa'(q): closed form when available, else Richardson-extrapolated
    central differences (relative target 1e-6)."""
    _require_supported(measure, q)
    if measure.kappa_prime_fn is not None:
        return float(measure.kappa_prime_fn(q))
    room = q - measure.p_lower_probe
    if room < 1e-6:
        raise IllConditionedError(f"q={q} is within {room:.2e} of p_lower")
    h = min(1e-2 * max(1.0, abs(q)), room / 4.0)

    def central(step):
        return (kappa(measure, q + step) - kappa(measure, q - step)) / (2.0 * step)

    prev = central(h)
    for _ in range(20):
        h /= 2.0
        cur = central(h)
        est = (4.0 * cur - prev) / 3.0
        if abs(est - cur) <= 1e-6 * max(abs(est), 1e-12):
            return est
        prev = cur
    return est


def levy_tail(measure: DislocationMeasure, y) -> np.ndarray:
    """Tail ``Lbar(y) = L((y, inf))``; Monte Carlo over the sampler when no
    closed form is supplied."""
    y = np.asarray(y, dtype=float)
    if measure.tail_fn is not None:
        return np.asarray(measure.tail_fn(y), dtype=float)
    x_sorted, cum = _empirical_tail(measure)
    idx = np.searchsorted(x_sorted, y, side="right")
    return measure.total_rate * cum[idx]


_EMPIRICAL_CACHE: dict = {}


def _empirical_tail(measure):
    key = id(measure)
    hit = _EMPIRICAL_CACHE.get(key)
    if hit is not None and hit[0] is measure:
        return hit[1], hit[2]
    rng = np.random.default_rng(0)
    u = measure.sample(rng, MC_SAMPLES).ravel()
    x = -np.log(u)
    order = np.argsort(x)
    x_sorted = x[order]
    w = u[order] / MC_SAMPLES
    # cum[i] = sum of weights with x > x_sorted[i-1]
    cum = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
    _EMPIRICAL_CACHE[key] = (measure, x_sorted, cum)
    return x_sorted, cum

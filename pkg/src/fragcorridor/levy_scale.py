"""Scale functions of the corridor Levy process and derived quantities.

The process is ``Y_t = v t - xi(t) + log(1/a)`` where ``xi`` is the
compound-Poisson subordinator of the tagged fragment. Its Laplace exponent is
``psi(lam) = v lam - kappa(lam)``. Everything is tabulated on a uniform grid
of ``[0, beta]``, ``beta = log(b/a)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
from scipy import optimize, signal

from .errors import (
    DomainError,
    FragCorridorError,
    GridTooCoarseError,
    InvalidTableError,
    MonotonicityViolation,
    NoRootError,
    RootNotFoundError,
    SeriesDivergenceError,
    UnsupportedMeasureError,
)
from .measures import DislocationMeasure, kappa, kappa_derivative, levy_tail

log = logging.getLogger(__name__)

DEFAULT_GRID_POINTS = 4096
SERIES_TOL = 1e-12
SERIES_MAX_TERMS = 300
RESIDUAL_TOL = 1e-3


@dataclass(frozen=True)
class LevyModel:
    measure: DislocationMeasure
    drift_v: float
    a: float
    b: float

    def __post_init__(self):
        if not self.drift_v > 0:
            raise DomainError("drift v must be positive")
        if not 0 < self.a < self.b:
            raise DomainError(f"need 0 < a < b, got a={self.a}, b={self.b}")

    @property
    def beta(self) -> float:
        return math.log(self.b / self.a)

    @property
    def h_offset(self) -> float:
        """Starting point ``log(1/a)`` of Y."""
        return -math.log(self.a)

    def with_corridor(self, a: float, b: float) -> "LevyModel":
        return replace(self, a=a, b=b)

    def with_drift(self, v: float) -> "LevyModel":
        return replace(self, drift_v=v)


@dataclass(frozen=True, eq=False)
class ScaleTable:
    """Tabulated ``W`` (and, once completed, ``W^(-rho)``) on ``[0, beta]``."""

    beta: float
    grid_step: float
    values_W: np.ndarray
    h_offset: float
    drift_v: Optional[float] = None
    values_Wq: Optional[np.ndarray] = None
    rho: Optional[float] = None
    exit_constant_c: Optional[float] = None
    truncation_terms: Optional[int] = None
    residuals: dict = field(default_factory=dict)
    warnings: tuple = ()
    source: str = "renewal"
    _powers: list = field(default_factory=list, repr=False)

    @property
    def n_intervals(self) -> int:
        return self.values_W.size - 1

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.beta, self.values_W.size)

    @property
    def complete(self) -> bool:
        return self.rho is not None and self.values_Wq is not None

    def summary(self) -> dict:
        return {
            "beta": self.beta,
            "rho": self.rho,
            "c": self.exit_constant_c,
            "truncation_terms": self.truncation_terms,
            "residuals": {format(k, ".6g"): v for k, v in self.residuals.items()},
            "grid_step": self.grid_step,
            "h_offset": self.h_offset,
            "warnings": list(self.warnings),
        }


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


# -- Laplace exponent ----------------------------------------------------------

def psi(model: LevyModel, lam: float) -> float:
    return model.drift_v * lam - kappa(model.measure, lam)


def psi_prime(model: LevyModel, lam: float) -> float:
    return model.drift_v - kappa_derivative(model.measure, lam)


def _bisect(f, lo, hi, rel=1e-13, max_iter=400):
    flo = f(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= rel * max(abs(hi), 1e-300):
            break
    return 0.5 * (lo + hi)


def phi(model: LevyModel, lam: float, cap: float = 1e12) -> float:
    """Largest root of ``psi(x) = lam`` (right inverse of psi)."""
    if lam < 0:
        raise DomainError("phi is defined for lam >= 0")
    if lam == 0 and psi_prime(model, 0.0) >= 0:
        return 0.0
    lo = 0.0
    if lam == 0:
        # psi dips below 0 first; start the bracket at its minimiser
        hi = 1.0
        while psi_prime(model, hi) < 0:
            hi *= 2.0
            if hi > cap:
                raise NoRootError("psi' never becomes positive")
        lo = _bisect(lambda x: psi_prime(model, x), 0.0, hi)
    hi = max(2.0 * lo, 1.0)
    while psi(model, hi) <= lam:
        hi *= 2.0
        if hi > cap:
            raise NoRootError(f"no root of psi(x) = {lam} below {cap:g}")
    return _bisect(lambda x: psi(model, x) - lam, lo, hi)


# -- scale functions -----------------------------------------------------------

def _grid_size(beta: float, grid_step: Optional[float]) -> tuple[int, float]:
    if grid_step is None:
        n = DEFAULT_GRID_POINTS
    else:
        if not grid_step > 0:
            raise DomainError("grid_step must be positive")
        n = max(8, int(math.ceil(beta / grid_step - 1e-9)))
    return n, beta / n


def _conv(f: np.ndarray, g: np.ndarray, dx: float) -> np.ndarray:
    """Trapezoid approximation of ``int_0^x f(y) g(x - y) dy`` on the grid."""
    n = f.size
    if n > 64:
        full = signal.fftconvolve(f, g)[:n]
    else:
        full = np.convolve(f, g)[:n]
    return dx * (full - 0.5 * (f[0] * g + g[0] * f))


def build_W(model: LevyModel, grid_step: Optional[float] = None) -> ScaleTable:
    """Solve ``v W(x) = 1 + int_0^x Lbar(y) W(x - y) dy`` by forward trapezoid.

    Valid because the jump part is compound Poisson, so Y has bounded
    variation and ``W(0) = 1/v``.
    """
    measure = model.measure
    if not math.isfinite(measure.total_rate):
        raise UnsupportedMeasureError("scale functions need a finite-activity measure")
    v = model.drift_v
    beta = model.beta
    n, dx = _grid_size(beta, grid_step)
    x = np.linspace(0.0, beta, n + 1)
    tail = levy_tail(measure, x)
    denom = v - 0.5 * dx * tail[0]
    if denom <= 0:
        raise GridTooCoarseError("grid step too large for the jump rate")
    w = np.empty(n + 1)
    w[0] = 1.0 / v
    for k in range(1, n + 1):
        s = np.dot(tail[1:k], w[k - 1:0:-1]) + 0.5 * tail[k] * w[0]
        w[k] = (1.0 + dx * s) / denom

    table = ScaleTable(beta=beta, grid_step=dx, values_W=_frozen(w),
                       h_offset=model.h_offset, drift_v=v)
    residuals = {}
    warnings = []
    for lam in laplace_probes(model):
        r = laplace_residual(table, model, lam)
        residuals[lam] = r
        if r > RESIDUAL_TOL:
            msg = f"Laplace residual {r:.2e} at lambda={lam:.4g} exceeds {RESIDUAL_TOL:g}"
            log.warning(msg)
            warnings.append(msg)
    return replace(table, residuals=residuals, warnings=tuple(warnings))


def laplace_probes(model: LevyModel) -> tuple[float, float]:
    lam = max(5.0, phi(model, 0.0) + 5.0, 15.0 / model.beta)
    return lam, 2.0 * lam


def laplace_residual(table: ScaleTable, model: LevyModel, lam: float) -> float:
    """Relative gap between the numerical transform of W and ``1/psi(lam)``.

    Beyond ``beta`` the table is extended by ``W(beta) e^{phi(0)(x - beta)}``.
    """
    x = table.grid
    w = table.values_W
    body = np.trapezoid(np.exp(-lam * x) * w, x)
    growth = phi(model, 0.0)
    tail = w[-1] * math.exp(-lam * table.beta) / (lam - growth)
    exact = 1.0 / psi(model, lam)
    return abs(body + tail - exact) / abs(exact)


def _power(table: ScaleTable, k: int) -> tuple[np.ndarray, float]:
    """``W^{*(k+1)}`` on the grid and its sup-norm, cached on the table."""
    powers = table._powers
    if not powers:
        w = np.asarray(table.values_W)
        powers.append((w, float(np.max(np.abs(w)))))
    while len(powers) <= k:
        prev = powers[-1][0]
        nxt = _conv(prev, np.asarray(table.values_W), table.grid_step)
        powers.append((nxt, float(np.max(np.abs(nxt)))))
    return powers[k]


def _series_tol(table: ScaleTable) -> float:
    return SERIES_TOL * max(1.0, _power(table, 0)[1])


def wq_series(table: ScaleTable, q: float) -> tuple[np.ndarray, int]:
    """``W^(q) = sum_k q^k W^{*(k+1)}`` and the number of terms summed."""
    w = np.array(table.values_W, dtype=float)
    if q == 0:
        return w, 1
    tol = _series_tol(table)
    result = w.copy()
    biggest = _power(table, 0)[1]
    for k in range(1, SERIES_MAX_TERMS):
        pk, sup = _power(table, k)
        scale = abs(q) ** k * sup
        result += q ** k * pk
        biggest = max(biggest, scale)
        if scale < tol:
            _check_cancellation(biggest, result)
            return result, k + 1
    raise SeriesDivergenceError(
        f"W^({q:.6g}) series did not converge in {SERIES_MAX_TERMS} terms; "
        "beta or |q| too large for the grid"
    )


def _check_cancellation(biggest, result):
    if biggest > 1e11 * max(float(np.max(np.abs(result))), 1e-300):
        raise SeriesDivergenceError("convolution series lost all precision to cancellation")


def _wq_at_end(table: ScaleTable, q: float) -> tuple[float, float]:
    """``W^(q)(beta)`` and an upper bound for ``sup |W^(q)|``."""
    tol = _series_tol(table)
    p0, sup0 = _power(table, 0)
    val = float(p0[-1])
    bound = sup0
    for k in range(1, SERIES_MAX_TERMS):
        pk, sup = _power(table, k)
        scale = abs(q) ** k * sup
        val += q ** k * float(pk[-1])
        bound += scale
        if scale < tol:
            return val, bound
    raise SeriesDivergenceError(f"W^({q:.6g}) series did not converge")


def build_Wq(table: ScaleTable, q: float) -> np.ndarray:
    return wq_series(table, q)[0]


def rho_lower_bound(table: ScaleTable) -> float:
    """``1 / int_0^beta W``, a lower bound for rho: the mean exit time from
    any start is at most that integral, and rho is at least the reciprocal of
    the largest mean exit time."""
    integral = float(np.trapezoid(table.values_W, dx=table.grid_step))
    if not integral > 0:
        raise InvalidTableError("W must be positive on (0, beta)")
    return 1.0 / integral


def rho_beta(table: ScaleTable) -> float:
    """First zero in q >= 0 of ``q -> W^(-q)(beta)``.

    Scans upward from ``rho_lower_bound`` in steps of a tenth of it and bisects
    the first sign change to 1e-10 relative width.
    """
    if not float(table.values_W[-1]) > 0:
        raise InvalidTableError("W(beta) must be positive")
    q0 = rho_lower_bound(table)
    step = 0.1 * q0

    def signed(q):
        val, sup = _wq_at_end(table, -q)
        if abs(val) < 1e-12 * sup:
            return 0.0
        return val

    lo, f_lo = q0, signed(q0)
    if f_lo == 0.0:
        return _validated(table, q0)
    if f_lo < 0:
        # only reachable through discretisation error right at the bound
        lo, hi = 0.0, q0
    else:
        hi = lo + step
        while True:
            f_hi = signed(hi)
            if f_hi <= 0:
                break
            lo = hi
            hi += step
            if hi > 1e5 * q0:
                raise RootNotFoundError(f"W^(-q)(beta) keeps its sign up to q={hi:.4g}")
        if f_hi == 0.0:
            return _validated(table, hi)
    while hi - lo > 1e-10 * hi:
        mid = 0.5 * (lo + hi)
        fm = signed(mid)
        if fm == 0.0:
            lo = hi = mid
            break
        if fm > 0:
            lo = mid
        else:
            hi = mid
    return _validated(table, 0.5 * (lo + hi))


def _validated(table: ScaleTable, rho: float) -> float:
    vals = build_Wq(table, -rho)
    interior = vals[1:-1]
    if np.min(interior) < -1e-9 * np.max(np.abs(vals)):
        raise GridTooCoarseError(
            f"W^(-rho) is negative inside (0, beta) at rho={rho:.6g}; refine the grid"
        )
    return float(rho)


def complete_table(table: ScaleTable) -> ScaleTable:
    """Attach rho, ``W^(-rho)``, the series length and the constant c."""
    rho = rho_beta(table)
    wq, terms = wq_series(table, -rho)
    prod = wq * wq[::-1]
    integral = float(np.trapezoid(prod, dx=table.grid_step))
    if not integral > 0:
        raise InvalidTableError("W^(-rho) vanishes identically")
    return replace(table, rho=rho, values_Wq=_frozen(wq), truncation_terms=terms,
                   exit_constant_c=1.0 / integral)


def scale_table(model: LevyModel, grid_step: Optional[float] = None) -> ScaleTable:
    """``build_W`` followed by ``complete_table``."""
    return complete_table(build_W(model, grid_step))


def _require_complete(table: ScaleTable) -> None:
    if not table.complete:
        raise InvalidTableError("operation needs a completed table (rho and W^(-rho))")


def h_eval(table: ScaleTable, t) -> np.ndarray:
    """``h(t) = W^(-rho)(t - log a)`` on ``(log a, log b)``, zero elsewhere."""
    _require_complete(table)
    x = np.asarray(t, dtype=float) + table.h_offset
    inside = (x > 0.0) & (x < table.beta)
    out = np.where(inside, np.interp(np.where(inside, x, 0.0), table.grid, table.values_Wq), 0.0)
    return out if out.ndim else float(out)


def wq_interp(table: ScaleTable, x) -> np.ndarray:
    """``W^(-rho)(x)`` for x in ``[0, beta]``, zero outside."""
    _require_complete(table)
    x = np.asarray(x, dtype=float)
    return np.where((x >= 0) & (x <= table.beta),
                    np.interp(x, table.grid, table.values_Wq), 0.0)


@dataclass(frozen=True, eq=False)
class ExitDensity:
    """``y -> c W^(-rho)(y) W^(-rho)(beta - y)`` on ``(0, beta)``."""

    grid: np.ndarray
    values: np.ndarray
    c: float

    @property
    def beta(self) -> float:
        return float(self.grid[-1])

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        inside = (y > 0) & (y < self.beta)
        return np.where(inside, np.interp(y, self.grid, self.values), 0.0)

    def total_mass(self) -> float:
        return float(np.trapezoid(self.values, self.grid))

    def bin_masses(self, edges) -> np.ndarray:
        edges = np.asarray(edges, dtype=float)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (self.values[1:] + self.values[:-1])
                                               * np.diff(self.grid))])
        return np.diff(np.interp(edges, self.grid, cdf))

    def integrate(self, f) -> float:
        return float(np.trapezoid(f(self.grid) * self.values, self.grid))


def exit_density(table: ScaleTable) -> ExitDensity:
    _require_complete(table)
    wq = np.asarray(table.values_Wq)
    if not np.any(wq[1:-1] > 0):
        raise InvalidTableError("W^(-rho) is identically zero")
    prod = np.clip(wq * wq[::-1], 0.0, None)
    c = 1.0 / float(np.trapezoid(prod, dx=table.grid_step))
    return ExitDensity(grid=table.grid, values=_frozen(c * prod), c=c)


# -- Brownian oracle -------------------------------------------------------------

def brownian_reference(beta: float, n_grid: int = DEFAULT_GRID_POINTS,
                       h_offset: Optional[float] = None) -> ScaleTable:
    """Closed-form table for ``psi(lam) = lam^2`` (generator ``d^2/dx^2``).

    ``W(x) = x``, ``rho = pi^2 / beta^2`` and
    ``W^(-rho)(x) = (beta/pi) sin(pi x / beta)``. ``values_W`` feeds the
    numerical routines; the other fields are the analytic answers.
    """
    if not beta > 0:
        raise DomainError("beta must be positive")
    x = np.linspace(0.0, beta, n_grid + 1)
    rho = math.pi ** 2 / beta ** 2
    wq = (beta / math.pi) * np.sin(math.pi * x / beta)
    wq[-1] = 0.0
    c = 2.0 * math.pi ** 2 / beta ** 3
    return ScaleTable(beta=beta, grid_step=beta / n_grid, values_W=_frozen(x),
                      h_offset=beta / 2.0 if h_offset is None else h_offset,
                      values_Wq=_frozen(wq), rho=rho, exit_constant_c=c,
                      source="brownian")


def numerical_from_W(table: ScaleTable) -> ScaleTable:
    """Drop the analytic fields of a table and recompute them numerically."""
    bare = ScaleTable(beta=table.beta, grid_step=table.grid_step,
                      values_W=table.values_W, h_offset=table.h_offset,
                      drift_v=table.drift_v, source=table.source + "+numerical")
    return complete_table(bare)


def rho_monotonicity_scan(model: Union[LevyModel, str], betas: Sequence[float],
                          grid_step: Optional[float] = None) -> list[tuple[float, float]]:
    """rho_beta along increasing betas; ``model="brownian"`` uses the oracle W."""
    betas = [float(b) for b in betas]
    if any(b <= 0 for b in betas) or any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise DomainError("betas must be positive and strictly increasing")
    out = []
    for beta in betas:
        if isinstance(model, str):
            if model != "brownian":
                raise DomainError(f"unknown backend {model!r}")
            n = DEFAULT_GRID_POINTS if grid_step is None else _grid_size(beta, grid_step)[0]
            table = brownian_reference(beta, n)
            table = ScaleTable(beta=beta, grid_step=table.grid_step,
                               values_W=table.values_W, h_offset=table.h_offset)
        else:
            table = build_W(model.with_corridor(model.a, model.a * math.exp(beta)), grid_step)
        out.append((beta, rho_beta(table)))
    for (b1, r1), (b2, r2) in zip(out, out[1:]):
        if not r2 < r1 * (1.0 + 1e-9):
            raise MonotonicityViolation(
                f"rho did not decrease: rho({b1:.4g})={r1:.8g}, rho({b2:.4g})={r2:.8g}"
            )
    return out


# -- multifractal spectrum ---------------------------------------------------------

@dataclass(frozen=True)
class SpectrumPoint:
    v: float
    upsilon_v: float
    C_v: float
    rho_v: float
    dim_predicted: float
    v_min: float
    v_max: float

    @property
    def margin(self) -> float:
        """``C(v) - (v - rho)``, nonnegative by set inclusion."""
        return self.C_v - (self.v - self.rho_v)


class SpectrumBoundViolation(FragCorridorError, ArithmeticError):
    pass


def v_typ(measure: DislocationMeasure) -> float:
    return kappa_derivative(measure, 0.0)


def v_max(measure: DislocationMeasure) -> float:
    """``kappa'(p_lower+)``, probed; infinite when kappa' is unbounded."""
    p_low = measure.p_lower_probe
    if not math.isfinite(p_low):
        return math.inf
    prev = None
    for k in range(1, 60):
        val = kappa_derivative(measure, p_low + 2.0 ** -k)
        if not math.isfinite(val) or val > 1e12:
            return math.inf
        if prev is not None and abs(val - prev) <= 1e-9 * abs(val):
            return val
        prev = val
    return prev if prev < 1e8 else math.inf


def v_min(measure: DislocationMeasure) -> float:
    """Maximum of ``p -> kappa(p - 1)/p`` over ``p > max(p_lower + 1, 0)``."""
    lower = max(measure.p_lower_probe + 1.0, 0.0)
    g = lambda p: kappa(measure, p - 1.0) / p
    ps = lower + np.geomspace(1e-4, 1e4, 400)
    vals = np.array([g(p) for p in ps])
    i = int(np.argmax(vals))
    lo = ps[max(i - 1, 0)]
    hi = ps[min(i + 1, ps.size - 1)]
    res = optimize.minimize_scalar(lambda p: -g(p), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    return max(float(-res.fun), float(vals[i]))


def upsilon(measure: DislocationMeasure, v: float) -> float:
    """Solve ``kappa'(p) = v`` by bisection (kappa' is decreasing)."""
    f = lambda p: kappa_derivative(measure, p) - v
    hi = 1.0
    while f(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            raise DomainError(f"kappa'(p) stays above v={v}")
    p_low = measure.p_lower_probe
    if math.isfinite(p_low):
        gap = hi - p_low
        lo = p_low + gap / 2.0
        while f(lo) < 0:
            gap /= 2.0
            lo = p_low + gap
            if gap < 1e-15:
                raise DomainError(f"v={v} exceeds v_max")
    else:
        lo = min(hi, 0.0) - 1.0
        while f(lo) < 0:
            lo = 2.0 * lo
            if lo < -1e6:
                raise DomainError(f"v={v} exceeds v_max")
    return _bisect(f, lo, hi, rel=1e-15)


def spectrum_quantities(model: LevyModel, grid_step: Optional[float] = None,
                        table: Optional[ScaleTable] = None) -> SpectrumPoint:
    measure = model.measure
    v = model.drift_v
    lo, hi = v_min(measure), v_max(measure)
    if not lo < v < hi:
        raise DomainError(f"v={v} outside the admissible range (v_min={lo:.6g}, v_max={hi:.6g})")
    ups = upsilon(measure, v)
    c_v = (ups + 1.0) * v - kappa(measure, ups)
    if table is None:
        table = build_W(model, grid_step)
    rho = table.rho if table.rho is not None else rho_beta(table)
    point = SpectrumPoint(v=v, upsilon_v=ups, C_v=c_v, rho_v=rho,
                          dim_predicted=1.0 - rho / v, v_min=lo, v_max=hi)
    if point.margin < -1e-9:
        raise SpectrumBoundViolation(
            f"C(v)={c_v:.8g} < v - rho={v - rho:.8g}; numerical fault"
        )
    return point


def spectrum_sweep(model: LevyModel, n_points: int = 16,
                   grid_step: Optional[float] = None) -> list[SpectrumPoint]:
    """SpectrumPoints on a uniform v grid strictly inside (v_min, v_hi),
    ``v_hi = min(v_max, 4 v_typ)``."""
    measure = model.measure
    lo = v_min(measure)
    hi = min(v_max(measure), 4.0 * v_typ(measure))
    vs = np.linspace(lo, hi, n_points + 2)[1:-1]
    return [spectrum_quantities(model.with_drift(float(v)), grid_step) for v in vs]

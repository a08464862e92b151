"""Acceptance gate: one check per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` (lines appear in the terminal
summary), or ``python tests/test_acceptance.py`` for the lines alone.
"""
from __future__ import annotations

import contextlib
import functools
import io
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from fragcorridor.cli import main as cli_main
from fragcorridor.dimension import dimension_trend
from fragcorridor.frag_engine import killed_survival_curve
from fragcorridor.levy_scale import (
    LevyModel, brownian_reference, build_W, numerical_from_W, rho_beta, rho_lower_bound,
    scale_table, spectrum_quantities, spectrum_sweep, v_typ,
)
from fragcorridor.martingale_stats import (
    aggregate, extinction_horizon, growth_rate_fit, probe_variance, sigma_histogram_distance,
    simulate_replicas,
)
from fragcorridor.measures import binary_uniform

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script
    ACCEPTANCE_LINES = []

SEED = 20240601
BU = binary_uniform(1.0)
KILLED = LevyModel(BU, 1.0, 0.5, 4.0)    # rho ~ 1.194 > v
GROWTH = LevyModel(BU, 1.0, 0.5, 16.0)   # rho ~ 0.597 < v
MAIN_TIMES = np.arange(0.0, 12.01, 0.5)
MAIN_REPLICAS = 10_000


def report(number: int, passed: bool, detail: str) -> bool:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


@functools.lru_cache(maxsize=None)
def growth_table():
    return scale_table(GROWTH)


@functools.lru_cache(maxsize=None)
def main_run():
    """Shared corridor run for the martingale, growth and profile criteria."""
    return simulate_replicas(GROWTH, growth_table(), MAIN_REPLICAS, 12.0, seed=SEED,
                             sample_times=MAIN_TIMES, hist_times=[10.0])


def criterion_1():
    start = time.perf_counter()
    worst_rho, worst_sup = 0.0, 0.0
    for beta in (1.0, 2.0, math.pi):
        ref = brownian_reference(beta)
        num = numerical_from_W(ref)
        worst_rho = max(worst_rho, abs(num.rho - math.pi ** 2 / beta ** 2) / (math.pi ** 2 / beta ** 2))
        exact = (beta / math.pi) * np.sin(math.pi * num.grid / beta)
        worst_sup = max(worst_sup, float(np.max(np.abs(num.values_Wq - exact))))
    elapsed = time.perf_counter() - start
    ok = worst_rho < 1e-3 and worst_sup < 1e-3 and elapsed < 10
    return report(1, ok, f"max rel rho error {worst_rho:.2e}, max sup error {worst_sup:.2e} "
                         f"(tol 1e-3), {elapsed:.2f}s (< 10s)")


def criterion_2():
    start = time.perf_counter()
    betas = np.linspace(0.5, 5.0, 10)
    rhos, bounds, exit_bounds = [], [], []
    for beta in betas:
        t = build_W(KILLED.with_corridor(0.5, 0.5 * math.exp(beta)))
        rhos.append(rho_beta(t))
        bounds.append(1.0 / t.values_W[-1])
        exit_bounds.append(rho_lower_bound(t))
    elapsed = time.perf_counter() - start
    decreasing = all(r2 < r1 for r1, r2 in zip(rhos, rhos[1:]))
    bound_ok = all(r >= lb for r, lb in zip(rhos, bounds))
    broken = [f"{b:.1f}" for b, r, lb in zip(betas, rhos, bounds) if r < lb]
    exit_ok = all(r >= lb for r, lb in zip(rhos, exit_bounds))
    ok = decreasing and bound_ok and elapsed < 30
    return report(2, ok, f"rho {rhos[0]:.4f} -> {rhos[-1]:.4f} over beta in [0.5, 5], "
                         f"strictly decreasing={decreasing}, rho >= 1/W(beta) everywhere={bound_ok}"
                         f"{' (fails at beta=' + ', '.join(broken) + ')' if broken else ''}, "
                         f"rho >= 1/int W everywhere={exit_ok}, {elapsed:.1f}s (< 30s)")


def criterion_3():
    table = scale_table(KILLED)
    times = np.arange(0.0, 12.01, 1.0)
    curve = killed_survival_curve(KILLED, table, 12.0, 10_000, np.random.default_rng(SEED),
                                  times=times, method="splitting")
    slope, _ = curve.decay_rate(6.0, 12.0)
    rel = abs(-slope - table.rho) / table.rho
    dev = np.abs(curve.mean_D - 1.0)
    ok_d = bool(np.all(dev <= 3 * curve.stderr_D))
    worst = float(np.max(np.where(curve.stderr_D > 0, dev / np.where(curve.stderr_D > 0, curve.stderr_D, 1), 0)))
    plain = killed_survival_curve(KILLED, table, 12.0, 10_000, np.random.default_rng(SEED),
                                  times=times, method="plain")
    empty = [float(t) for t, s in zip(times, plain.survival) if s == 0]
    ok = rel < 0.05 and ok_d
    return report(3, ok, f"splitting estimator, 10^4 particles: decay {-slope:.4f} vs rho "
                         f"{table.rho:.4f} (rel {rel:.2%}, tol 5%); max |mean D - 1|/stderr "
                         f"{worst:.2f} (tol 3); plain MC has no survivors from t={empty[0] if empty else 'none'}")


def criterion_4():
    stats = main_run()
    agg = aggregate(stats)
    idx = [int(np.flatnonzero(np.isclose(MAIN_TIMES, t))[0]) for t in (2.0, 5.0, 10.0)]
    z = [abs(agg.mean_M[i] - 1.0) / agg.stderr_M[i] for i in idx]
    ratio = agg.second_moment_M[-1] / agg.second_moment_M[-2]
    table_k = scale_table(KILLED)
    horizon = extinction_horizon(table_k, KILLED, 1000)
    ext = simulate_replicas(KILLED, table_k, 1000, horizon, seed=SEED,
                            sample_times=np.array([0.0, horizon]))
    absorbed = sum(math.isfinite(s.zeta) and not s.survived for s in ext)
    ok = max(z) < 3 and ratio < 1.05 and absorbed == 1000
    return report(4, ok, f"|E[M_t]-1|/stderr at t=2,5,10: {', '.join(f'{x:.2f}' for x in z)} "
                         f"(tol 3); E[M^2] final/penultimate {ratio:.4f} (tol 1.05); "
                         f"rho>v config absorbed {absorbed}/1000 by t={horizon:.1f}")


def criterion_5():
    table = growth_table()
    fit = growth_rate_fit(main_run(), table)
    win_stats = simulate_replicas(GROWTH, table, 300, 10.0, seed=SEED + 1,
                                  sample_times=np.arange(0.0, 10.01, 0.5), window=True)
    win = growth_rate_fit(win_stats, table, use_window_count=True)
    ok = fit.relative_error < 0.10 and win.slope >= fit.slope - fit.stderr
    return report(5, ok, f"slope {fit.slope:.4f} vs v-rho {fit.oracle:.4f} "
                         f"(rel {fit.relative_error:.2%}, tol 10%, {fit.n_survivors} survivors); "
                         f"window slope {win.slope:.4f} >= {fit.slope - fit.stderr:.4f}")


def criterion_6():
    table = growth_table()
    stats = main_run()
    dist = sigma_histogram_distance(stats, table, time=10.0)
    pv = probe_variance(stats, table, (4.0, 7.0, 10.0))
    vals = [pv[t] for t in (4.0, 7.0, 10.0)]
    ok = dist.l1 < 0.05
    return report(6, ok, f"L1 at t=10 {dist.l1:.4f} (tol 0.05, {dist.n_survivors} survivors); "
                         f"probe variance t=4,7,10: {', '.join(f'{v:.2e}' for v in vals)} "
                         f"decreasing={vals[0] > vals[1] > vals[2]}")


def criterion_7():
    vt = v_typ(BU)
    p = spectrum_quantities(GROWTH.with_drift(vt))
    pts = spectrum_sweep(GROWTH, n_points=16)
    worst = min(q.margin for q in pts)
    ok = abs(p.C_v - vt) < 1e-6 and worst >= 0
    return report(7, ok, f"|C(v_typ) - v_typ| = {abs(p.C_v - vt):.2e} (tol 1e-6); "
                         f"min C(v)-(v-rho) over {len(pts)} speeds in ({pts[0].v:.3f}, {pts[-1].v:.3f}) "
                         f"= {worst:.4f}")


def criterion_8():
    tr = dimension_trend(GROWTH, growth_table().rho, (8.0, 10.0, 12.0), 500, seed=SEED)
    gaps = tr.gaps
    ok = tr.shrinking and gaps[-1] <= 0.15
    est = ", ".join(f"{s.mean_slope:.3f}" for s in tr.summaries)
    return report(8, ok, f"mean box-count slope at t=8,10,12: {est} vs 1-rho/v "
                         f"{tr.summaries[0].predicted:.3f}; gaps {', '.join(f'{g:.3f}' for g in gaps)} "
                         f"shrinking={tr.shrinking}, final within 0.15={gaps[-1] <= 0.15} "
                         f"({tr.summaries[-1].n_survivors} survivors)")


def criterion_9():
    cfg_text = ("measure = binary-uniform\nv = 1.0\na = 0.5\nb = 16.0\nhorizon = 8\n"
                "replicas = 40\nseed = 5\nhorizons = 6, 8\nwindow_counts = true\n"
                "spectrum_points = 4\n")
    commands = ("scale", "simulate", "dimension", "spectrum", "validate")
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = tmp / "run.cfg"
        cfg.write_text(cfg_text)
        snapshots = []
        codes = []
        for k in range(2):
            out = tmp / f"out{k}"
            for cmd in commands:
                with contextlib.redirect_stdout(io.StringIO()):
                    codes.append(cli_main([cmd, "--config", str(cfg), "--out", str(out)]))
            files = sorted(p for p in out.rglob("*") if p.is_file() and "timing" not in p.name)
            snapshots.append({p.relative_to(out).as_posix(): p.read_bytes() for p in files})
    same = snapshots[0] == snapshots[1]
    ok = same and all(c == 0 for c in codes)
    return report(9, ok, f"{len(snapshots[0])} output files from {len(commands)} commands, "
                         f"byte-identical across two runs={same}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 10)])
def test_acceptance(criterion):
    assert criterion()


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)

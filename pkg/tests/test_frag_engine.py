from __future__ import annotations

import math

import numpy as np
import pytest

from fragcorridor.errors import DomainError, PopulationOverflow
from fragcorridor.frag_engine import (
    History, advance, initial_state, killed_survival_curve, replica_stream, simulate,
    tagged_batch, tagged_trajectory, write_event_log,
)
from fragcorridor.levy_scale import LevyModel, psi
from fragcorridor.measures import binary_uniform, ternary_dirichlet


def test_streams_reproducible_and_distinct():
    a = replica_stream(5, 3).random(4)
    np.testing.assert_array_equal(a, replica_stream(5, 3).random(4))
    assert not np.allclose(a, replica_stream(5, 4).random(4))


def test_full_mode_conserves_mass_and_tiles(growth_model):
    s = simulate(growth_model, 6.0, seed=1, mode="full")
    order = np.argsort(s.left)
    left, length = s.left[order], s.length[order]
    assert length.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(left[1:], (left + length)[:-1], atol=1e-12)
    assert left[0] == 0.0


def test_simulation_deterministic(growth_model):
    s1 = simulate(growth_model, 8.0, seed=2, replica=9)
    s2 = simulate(growth_model, 8.0, seed=2, replica=9)
    np.testing.assert_array_equal(s1.left, s2.left)
    np.testing.assert_array_equal(s1.length, s2.length)


def test_corridor_population_is_good(growth_model):
    for r in range(20):
        s = simulate(growth_model, 7.0, seed=0, replica=r)
        scaled = np.exp(7.0) * s.length
        assert np.all((scaled > 0.5) & (scaled < 16.0))


def test_window_mode_goodness_matches_corridor_rules(growth_model):
    s = simulate(growth_model, 7.0, seed=4, mode="window")
    good = s.good_mask()
    scaled = np.exp(7.0) * s.length[good]
    assert np.all((scaled > 0.5) & (scaled < 16.0))
    assert good.sum() <= s.window_mask().sum()


def test_event_log_count_bookkeeping(growth_model, tmp_path):
    h = History()
    s = simulate(growth_model, 8.0, seed=3, history=h)
    n = 0
    for _, event, _, _ in h.event_log():
        n += {"birth": 1, "split": -1, "exit": -1, "discard": 0}[event]
        assert n >= 0
    assert n == len(s)
    write_event_log(h, tmp_path / "events.csv")
    lines = (tmp_path / "events.csv").read_text().splitlines()
    assert lines[0] == "t,event,interval_left,interval_length"
    assert len(lines) == len(h.event_log()) + 1


def test_narrow_corridor_keeps_at_most_one(bu_measure):
    # b <= 2a: two siblings cannot both stay above a e^{-vt}
    m = LevyModel(ternary_dirichlet(), 1.0, 0.6, 1.1)
    h = History()
    simulate(m, 6.0, seed=0, history=h)
    arr = h.arrays()
    for t in np.linspace(0, 6, 61):
        assert np.sum((arr["birth"] <= t) & (t < arr["end"]) & (arr["fate"] != 3)) <= 1
    m2 = LevyModel(bu_measure, 1.0, 0.6, 1.1)
    for r in range(10):
        assert len(simulate(m2, 5.0, seed=1, replica=r)) <= 1


def test_activation_time_defers_the_corridor(bu_measure):
    m = LevyModel(bu_measure, 1.0, 2.0, 8.0)  # 1 is below a: empty without activation
    assert len(simulate(m, 3.0, seed=0)) == 0
    st = simulate(m, 3.0, seed=0, activation_time=1.0)
    scaled = np.exp(3.0) * st.length
    assert np.all((scaled > 2.0) & (scaled < 8.0))


def test_incremental_advance_is_valid(growth_model):
    st = initial_state(growth_model, replica_stream(0, 0))
    st = advance(st, 4.0)
    st = advance(st, 8.0)
    scaled = np.exp(8.0) * st.length
    assert np.all((scaled > 0.5) & (scaled < 16.0))
    with pytest.raises(DomainError):
        advance(st, 7.0)


def test_population_cap(growth_model):
    with pytest.raises(PopulationOverflow) as exc:
        simulate(growth_model, 12.0, seed=0, mode="full", population_cap=500)
    assert 0 < exc.value.time_reached < 12.0


def test_tagged_subordinator_laplace_transform(growth_model):
    # E[e^{lam Y_t}] = e^{lam log(1/a) + t psi(lam)}
    y, _ = tagged_batch(growth_model, 200_000, [1.0, 3.0], np.random.default_rng(0))
    for lam in (0.5, 1.0):
        vals = np.exp(lam * y)
        exact = np.exp(lam * growth_model.h_offset + np.array([1.0, 3.0]) * psi(growth_model, lam))
        se = vals.std(axis=0) / math.sqrt(vals.shape[0])
        assert np.all(np.abs(vals.mean(axis=0) - exact) < 4 * se)


def test_tagged_trajectory_path(growth_model, growth_table):
    p = tagged_trajectory(growth_model, 5.0, np.random.default_rng(1), growth_table)
    assert p.D_values[0] == pytest.approx(1.0)
    assert np.all(np.diff(p.jump_times) > 0)
    assert np.all(np.diff(p.xi_values) > 0)
    if math.isfinite(p.exit_time):
        assert p.D(p.exit_time + 1e-9) == 0.0


def test_killed_martingale_mean_plain(extinct_model, extinct_table):
    times = np.arange(0.0, 3.01, 0.5)
    c = killed_survival_curve(extinct_model, extinct_table, 3.0, 100_000,
                              np.random.default_rng(7), times=times)
    assert np.all(np.abs(c.mean_D[1:] - 1.0) < 4 * c.stderr_D[1:])
    assert np.all(np.diff(c.survival) <= 0)

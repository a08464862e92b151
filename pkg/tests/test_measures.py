from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fragcorridor.errors import IllConditionedError, MeasureContractError
from fragcorridor.measures import (
    CATALOG, binary_uniform, check_splits, deterministic_halving, deterministic_split,
    from_sampler, kappa, kappa_derivative, kappa_mc, levy_tail, ternary_dirichlet,
)


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_catalog_samples_tile_unit_interval(name):
    m = CATALOG[name]()
    u = m.sample(np.random.default_rng(0), 1000)
    assert u.shape == (1000, m.arity)
    np.testing.assert_allclose(u.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(u > 0)


def test_check_splits_rejects_bad_rows():
    with pytest.raises(MeasureContractError):
        check_splits(np.array([[0.5, 0.4]]))
    with pytest.raises(MeasureContractError):
        check_splits(np.array([[1.2, -0.2]]))


def test_binary_uniform_kappa_closed_form():
    m = binary_uniform(2.0)
    for q in (0.0, 0.5, 1.0, 3.0):
        assert kappa(m, q) == pytest.approx(2.0 * q / (q + 2.0))
    assert m.p_lower_probe == pytest.approx(-2.0, abs=1e-6)


def test_ternary_dirichlet_moments():
    # Dirichlet(1,1,1): E[U^2] = 1/6, E[U^3] = 1/10, E[-U log U] = 5/18
    m = ternary_dirichlet()
    assert kappa(m, 1.0) == pytest.approx(0.5)
    assert kappa(m, 2.0) == pytest.approx(0.7)
    assert kappa_derivative(m, 0.0) == pytest.approx(5.0 / 6.0, rel=1e-9)
    assert m.p_lower_probe == pytest.approx(-2.0, abs=1e-6)


def test_deterministic_split_has_no_lower_bound():
    m = deterministic_halving()
    assert kappa(m, 1.0) == pytest.approx(0.5)
    assert kappa_derivative(m, 0.0) == pytest.approx(math.log(2.0))
    assert m.p_lower_probe == -math.inf


def test_kappa_mc_matches_closed_form():
    m = ternary_dirichlet()
    est, se = kappa_mc(m, 1.0, n=200_000, seed=3)
    assert abs(est - 0.5) < 4 * se


def test_sampler_only_measure_uses_monte_carlo():
    def sampler(rng, n):
        v = rng.random(n)
        return np.column_stack([v, 1.0 - v])

    m = from_sampler("uniform-by-sampler", 1.0, 2, sampler, p_lower=-2.0)
    assert kappa(m, 1.0) == pytest.approx(1.0 / 3.0, abs=5e-3)
    assert levy_tail(m, 0.5) == pytest.approx(math.exp(-1.0), abs=5e-3)


def test_kappa_derivative_near_lower_bound_is_refused():
    def sampler(rng, n):
        v = rng.random(n)
        return np.column_stack([v, 1.0 - v])

    m = from_sampler("uniform-by-sampler", 1.0, 2, sampler, p_lower=-2.0)
    with pytest.raises(IllConditionedError):
        kappa_derivative(m, -2.0 + 1e-8)


def test_levy_tail_binary_uniform():
    m = binary_uniform(1.0)
    y = np.array([0.0, 0.3, 2.0])
    np.testing.assert_allclose(levy_tail(m, y), np.exp(-2 * y))


def test_deterministic_fraction_validated():
    with pytest.raises(MeasureContractError):
        deterministic_split(1.0)


@settings(max_examples=40, deadline=None)
@given(q1=st.floats(0.0, 20.0), q2=st.floats(0.0, 20.0), w=st.floats(0.0, 1.0),
       name=st.sampled_from(sorted(CATALOG)))
def test_kappa_concave_and_increasing(q1, q2, w, name):
    m = CATALOG[name]()
    mid = w * q1 + (1 - w) * q2
    assert kappa(m, mid) >= w * kappa(m, q1) + (1 - w) * kappa(m, q2) - 1e-12
    lo, hi = sorted((q1, q2))
    assert kappa(m, hi) >= kappa(m, lo) - 1e-12
    assert kappa_derivative(m, mid) > 0

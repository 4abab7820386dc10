import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cchain.decay import (DecayFitError, DecayMeasurement, decay_sweep, delta, delta_contraction_check,
                          delta_integral_mc, fit_decay, measure_ratio, place_clusters, sup_ratio_from_densities)
from cchain.model import ModelParams
from cchain.transfer import build_kernel
from oracles import FiveSiteSimpson

P21 = ModelParams(2.0, 1.0)


@pytest.mark.parametrize("il,jl,r", [(1, 1, 1), (1, 1, 5), (2, 1, 3), (1, 2, 2), (2, 2, 7)])
def test_free_case_ratio_vanishes(kernel_free, il, jl, r):
    assert measure_ratio(kernel_free, 32, il, jl, r).sup_ratio < 1e-8


def test_ratio_shrinks_with_separation(kernel):
    assert measure_ratio(kernel, 64, 1, 1, 6).sup_ratio < measure_ratio(kernel, 64, 1, 1, 2).sup_ratio


def test_ratio_five_sites_matches_simpson_oracle(kernel):
    ref = FiveSiteSimpson(2.0, 1.0).sup_ratio(kernel.grid.nodes)
    assert measure_ratio(kernel, 5, 1, 1, 1).sup_ratio == pytest.approx(ref, abs=1e-4)


@pytest.mark.parametrize("il,jl,r", [(1, 1, 2), (2, 1, 1), (1, 2, 3), (2, 2, 2)])
def test_ratio_matches_full_density_route(il, jl, r):
    # small beta keeps every density value representable, so the direct route sees the whole grid
    k = build_kernel(ModelParams(0.1, 1.0), 24)
    n = 12
    i, j = place_clusters(n, il, jl, r)
    direct = sup_ratio_from_densities(k, n, i, j)
    assert measure_ratio(k, n, il, jl, r).sup_ratio == pytest.approx(direct, rel=1e-9)


def test_ratio_placement_checks(kernel):
    with pytest.raises(ValueError):
        measure_ratio(kernel, 10, 2, 2, 6)
    with pytest.raises(ValueError):
        measure_ratio(kernel, 10, 3, 1, 2)


@settings(max_examples=8)
@given(st.integers(1, 63))
def test_ratio_placement_invariance(kernel, shift):
    base = measure_ratio(kernel, 64, 2, 1, 4).sup_ratio
    moved = measure_ratio(kernel, 64, 2, 1, 4, shift=shift).sup_ratio
    assert moved == pytest.approx(base, rel=1e-10)


def test_ratio_nonincreasing_in_separation(kernel):
    sups = [m.sup_ratio for m in decay_sweep(kernel, 64, 1, 1, range(2, 13))]
    assert all(b <= a + 1e-10 for a, b in zip(sups, sups[1:]))


def _synthetic(rs, c, alpha, params=P21):
    return [DecayMeasurement(params, 64, 1, 1, r, c * math.exp(-alpha * r)) for r in rs]


def test_fit_recovers_exact_exponential():
    fit = fit_decay(_synthetic(range(2, 9), 0.5, 0.8))
    assert fit.alpha_hat == pytest.approx(0.8, abs=1e-10)
    assert fit.c_hat == pytest.approx(0.5, abs=1e-10)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.r_range == (2, 8)


@given(st.floats(1e-3, 10), st.floats(0.01, 5))
def test_fit_recovers_parameters_property(c, alpha):
    fit = fit_decay(_synthetic(range(2, 10), c, alpha))
    assert fit.alpha_hat == pytest.approx(alpha, rel=1e-9)
    assert fit.c_hat == pytest.approx(c, rel=1e-9)


def test_fit_input_errors():
    with pytest.raises(ValueError):
        fit_decay(_synthetic(range(2, 5), 1, 1))
    mixed = _synthetic(range(2, 6), 1, 1) + [DecayMeasurement(P21, 32, 1, 1, 6, 1e-3)]
    with pytest.raises(ValueError):
        fit_decay(mixed)
    bad = _synthetic(range(2, 6), 1, 1) + [DecayMeasurement(P21, 64, 1, 1, 6, 0.0)]
    with pytest.raises(DecayFitError):
        fit_decay(bad)
    with pytest.raises(DecayFitError):
        fit_decay(_synthetic(range(2, 8), 1e-30, 1, ModelParams(2, 0)))


def test_fit_quality_and_envelope(kernel):
    ms = decay_sweep(kernel, 64, 1, 1, range(2, 11))
    fit = fit_decay(ms)
    assert fit.alpha_hat > 0 and fit.r_squared >= 0.98
    for m in ms:
        assert m.sup_ratio <= fit.envelope(m.r) * 1.25


def test_fitted_rate_falls_with_gamma():
    alphas = [fit_decay(decay_sweep(build_kernel(ModelParams(2, g)), 64, 1, 1, range(2, 11))).alpha_hat
              for g in (0.1, 0.5, 1.0)]
    assert alphas[0] > alphas[1] > alphas[2] > 0


# -- Delta^r ------------------------------------------------------------------------

def test_delta_antisymmetry(kernel):
    t = kernel.scaled(3)
    rng = np.random.default_rng(11)
    for _ in range(20):
        z = list(rng.integers(0, kernel.m, 8))
        swapped = [z[0], z[3], z[2], z[1], z[4], z[7], z[6], z[5]]
        assert abs(delta(t, z) + delta(t, swapped)) <= 1e-12


def test_delta_vanishes_when_free(kernel_free):
    assert delta_contraction_check(kernel_free, 2).lhs < 1e-10


def test_delta_ratio_contracts(kernel):
    c2 = delta_contraction_check(kernel, 2)
    c4 = delta_contraction_check(kernel, 4)
    assert c4.ratio < c2.ratio
    assert c4.ratio_sequence_decreasing


def test_delta_cost_guard(kernel):
    with pytest.raises(ValueError):
        delta_contraction_check(kernel, 7)
    with pytest.raises(ValueError):
        delta_contraction_check(kernel, 0)


@pytest.mark.slow
def test_delta_grid_against_monte_carlo(kernel):
    grid = delta_contraction_check(kernel, 2).lhs
    mc, se = delta_integral_mc(kernel, 2, 1_000_000, np.random.default_rng(3))
    # the 12-node rule carries about 1% bias for this non-smooth |.| integrand
    assert grid == pytest.approx(mc, rel=0.02)
    assert se < 0.01 * mc

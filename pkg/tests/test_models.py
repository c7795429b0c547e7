import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from modelrisk.errors import NoArbitrageViolation
from modelrisk.measure import ReturnGrid, kl_divergence, mass_above
from modelrisk.models import (
    BsParams,
    HestonParams,
    HestonState,
    SliceContext,
    bs_call_price,
    bs_delta,
    bs_density,
    bs_eta2_closed_form,
    bs_implied_vol,
    heston_call_price,
    heston_call_prices,
    heston_cf,
    heston_density,
    heston_exercise_prob,
)

HESTON = HestonParams(kappa=2.0, theta_lr=0.04, eta_vv=0.5, rho=-0.6)
V0 = HestonState(0.05)


def test_bs_density_moments():
    ctx = SliceContext.from_rate(100.0, 0.0, 1.0)
    g = ReturnGrid.for_volatility(0.2, 1.0, size=4096)
    p = bs_density(BsParams(0.2), ctx, g)
    assert p.weights.sum() == pytest.approx(1.0, abs=1e-10)
    assert p.mean() == pytest.approx(-0.02, abs=1e-6)
    assert p.variance() == pytest.approx(0.04, abs=1e-6)
    assert p.mean(np.exp(g.points)) == pytest.approx(1.0, abs=1e-6)


def test_bs_grid_price_matches_closed_form():
    ctx = SliceContext.from_rate(100.0, 0.0, 1.0)
    g = ReturnGrid.for_volatility(0.2, 1.0, size=4096)
    p = bs_density(BsParams(0.2), ctx, g)
    grid_price = p.mean(np.maximum(100 * np.exp(g.points) - 100, 0))
    assert grid_price == pytest.approx(7.9656, abs=1e-3)
    assert bs_call_price(BsParams(0.2), ctx, 100.0) == pytest.approx(7.9656, abs=1e-3)


def test_bs_price_limits(ctx):
    assert bs_call_price(BsParams(1e-8), ctx, 90.0) == pytest.approx(100 - ctx.discount * 90, abs=1e-8 * 100)
    assert bs_call_price(BsParams(0.2), ctx, 1e-9) == pytest.approx(100.0, rel=1e-9)


def test_bs_delta_symmetry_point(ctx):
    s = 0.3
    k = ctx.forward * math.exp(0.5 * s * s * ctx.tau)
    assert bs_delta(BsParams(s), ctx, k) == pytest.approx(0.5, abs=1e-12)
    assert bs_delta(BsParams(s), ctx, 1e-8) == pytest.approx(1.0)
    assert bs_delta(BsParams(s), ctx, 1e8) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("sigma,k_mult,tol", [(0.2, 1.0, 1e-8), (0.8, 2.0, 1e-6), (0.05, 0.95, 1e-8)])
def test_implied_vol_round_trip(ctx, sigma, k_mult, tol):
    k = ctx.forward * k_mult
    price = bs_call_price(BsParams(sigma), ctx, k)
    assert bs_implied_vol(ctx, k, price) == pytest.approx(sigma, abs=tol)


def test_implied_vol_is_monotone_near_lower_bound(ctx):
    k = 100.0
    lower = 100 - ctx.discount * k
    vols = [bs_implied_vol(ctx, k, lower + eps) for eps in (1e-3, 1e-2, 1e-1, 1.0)]
    assert vols == sorted(vols)
    assert vols[0] < 0.01


def test_implied_vol_rejects_arbitrage(ctx):
    with pytest.raises(NoArbitrageViolation):
        bs_implied_vol(ctx, 100.0, 101.0)
    with pytest.raises(NoArbitrageViolation):
        bs_implied_vol(ctx, 50.0, 1.0)


def test_eta2_closed_form_values():
    assert bs_eta2_closed_form(0.2, 0.2, 1.0) == 0.0
    assert bs_eta2_closed_form(0.2, 0.3, 1.0) == pytest.approx(0.227347, abs=1e-6)
    # KL between N(-s^2/2, s^2) laws, evaluated independently
    assert bs_eta2_closed_form(0.3, 0.2, 1.0) == pytest.approx(0.131160, abs=1e-6)


@given(st.floats(0.05, 0.8), st.floats(0.05, 0.8), st.floats(0.05, 2.0))
def test_eta2_closed_form_is_gaussian_kl(s0, s1, tau):
    m0, v0 = -0.5 * s0 * s0 * tau, s0 * s0 * tau
    m1, v1 = -0.5 * s1 * s1 * tau, s1 * s1 * tau
    kl = 0.5 * (v1 / v0 + (m1 - m0) ** 2 / v0 - 1 + math.log(v0 / v1))
    assert bs_eta2_closed_form(s0, s1, tau) == pytest.approx(kl, rel=1e-10, abs=1e-14)


def test_grid_kl_matches_closed_form():
    ctx = SliceContext.from_rate(100.0, 0.0, 1.0)
    g = ReturnGrid.for_volatility(0.3, 1.0, size=4096)
    q = bs_density(BsParams(0.3), ctx, g)
    p = bs_density(BsParams(0.2), ctx, g)
    assert kl_divergence(q, p) == pytest.approx(0.227347, abs=1e-4)


def test_heston_cf_at_origin_and_martingale_point():
    assert heston_cf(0.0, HESTON, V0, 1.0) == pytest.approx(1.0, abs=1e-14)
    assert heston_cf(-1j, HESTON, V0, 1.0) == pytest.approx(1.0, abs=1e-12)


def test_heston_cf_degenerates_to_bs():
    p = HestonParams(1.0, 0.04, 1e-4, 0.0)
    u = np.linspace(-20, 20, 41)
    bs = np.exp(-(u * u + 1j * u) * 0.04 * 0.5)
    np.testing.assert_allclose(heston_cf(u, p, HestonState(0.04), 1.0), bs, atol=1e-6)


@given(
    st.floats(0.5, 5.0),
    st.floats(0.01, 0.1),
    st.floats(0.1, 1.0),
    st.floats(-0.9, 0.5),
    st.floats(0.01, 0.1),
    st.sampled_from([0.25, 0.5, 1.0]),
)
def test_heston_density_is_a_martingale(kappa, theta, eta, rho, v, tau):
    params = HestonParams(kappa, theta, eta, rho)
    ctx = SliceContext.from_rate(100.0, 0.01, tau)
    g = ReturnGrid.for_volatility(math.sqrt(max(v, theta)), tau, size=4096)
    p = heston_density(params, HestonState(v), ctx, g)
    assert p.mean(np.exp(g.points)) == pytest.approx(1.0, abs=1e-4)


def test_heston_mass_above_matches_exercise_probability():
    params = HestonParams(1.0, 0.04, 0.5, -0.7)
    ctx = SliceContext.from_rate(100.0, 0.0, 0.5)
    g = ReturnGrid.for_volatility(0.2, 0.5, size=4096)
    p = heston_density(params, HestonState(0.04), ctx, g)
    for k in (80.0, 95.0, 100.0, 110.0, 130.0):
        assert mass_above(p, ctx.exercise_threshold(k)) == pytest.approx(
            heston_exercise_prob(params, HestonState(0.04), ctx, k), abs=1e-5
        )


def test_exercise_probability_limits():
    ctx = SliceContext.from_rate(100.0, 0.0, 0.5)
    assert heston_exercise_prob(HESTON, V0, ctx, 1e-3) == pytest.approx(1.0, abs=1e-6)
    assert heston_exercise_prob(HESTON, V0, ctx, 1e4) == pytest.approx(0.0, abs=1e-6)


def test_lewis_prices_agree_and_match_grid(ctx):
    strikes = np.array([70.0, 90.0, 100.0, 110.0, 140.0])
    fast = heston_call_prices(HESTON, V0, ctx, strikes)
    slow = np.array([heston_call_price(HESTON, V0, ctx, k) for k in strikes])
    np.testing.assert_allclose(fast, slow, atol=1e-9)
    g = ReturnGrid.for_volatility(math.sqrt(0.05), ctx.tau, size=4096)
    p = heston_density(HESTON, V0, ctx, g)
    grid = np.maximum(100 * np.exp(g.points)[None, :] - ctx.discount * strikes[:, None], 0) @ p.weights
    np.testing.assert_allclose(grid, fast, atol=1e-6 * 100)


def test_heston_prices_reduce_to_bs(ctx):
    params = HestonParams(1.0, 0.04, 1e-4, 0.0)
    strikes = np.array([80.0, 100.0, 120.0])
    np.testing.assert_allclose(
        heston_call_prices(params, HestonState(0.04), ctx, strikes),
        bs_call_price(BsParams(0.2), ctx, strikes),
        atol=1e-6,
    )

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from modelrisk.errors import GridMismatch, GridTooNarrow, SupportViolation
from modelrisk.measure import (
    GridMeasure,
    PayoffMatrix,
    ReturnGrid,
    exponential_tilt,
    kl_divergence,
    log_partition,
    mass_above,
    radon_nikodym,
)

from conftest import random_measure


def test_grid_for_volatility_is_centred_on_the_drift():
    g = ReturnGrid.for_volatility(0.2, 1.0, size=1024, width=10)
    assert g.size == 1024
    assert g.points[0] == pytest.approx(-10 * 0.2 - 0.02)
    assert g.points[-1] == pytest.approx(10 * 0.2 - 0.02)
    assert g.is_fft_compatible


@pytest.mark.parametrize("size", [32, 100, 1000])
def test_grid_rejects_non_fft_sizes(size):
    with pytest.raises(ValueError):
        ReturnGrid.for_volatility(0.2, 1.0, size=size)


def test_measure_validation(small_grid):
    with pytest.raises(ValueError):
        GridMeasure(small_grid, np.ones(64))
    with pytest.raises(ValueError):
        GridMeasure(small_grid, np.ones(10) / 10)
    w = np.full(64, 1 / 64)
    w[0] = -w[0]
    with pytest.raises(ValueError):
        GridMeasure(small_grid, w)


def test_weights_are_read_only(small_grid, rng):
    m = random_measure(rng, small_grid)
    with pytest.raises(ValueError):
        m.weights[0] = 0.5


def test_kl_of_measure_with_itself_is_zero(small_grid, rng):
    m = random_measure(rng, small_grid)
    assert kl_divergence(m, m) == 0.0


def test_two_node_kl():
    g = ReturnGrid(0.0, 1.0, 2)
    p = GridMeasure(g, np.array([0.5, 0.5]))
    q = GridMeasure(g, np.array([0.25, 0.75]))
    assert kl_divergence(q, p) == pytest.approx(0.130812, abs=1e-6)
    np.testing.assert_allclose(radon_nikodym(q, p), [0.5, 1.5])


def test_two_node_tilt():
    g = ReturnGrid(0.0, 1.0, 2)
    p = GridMeasure(g, np.array([0.5, 0.5]))
    z = PayoffMatrix(g, np.array([[0.0, 1.0]]), np.array([1.0]))
    q = exponential_tilt(p, [np.log(3.0)], z)
    np.testing.assert_allclose(q.weights, [0.25, 0.75], rtol=1e-14)
    np.testing.assert_array_equal(exponential_tilt(p, [0.0], z).weights, p.weights)


def test_expectation_by_hand():
    from modelrisk.measure import expectation

    g = ReturnGrid(0.0, 1.0, 2)
    assert expectation(GridMeasure(g, np.array([0.25, 0.75])), [0.0, 2.0]) == pytest.approx(1.5)


def test_radon_nikodym_chains(rng, small_grid):
    q, ps, p = (random_measure(rng, small_grid) for _ in range(3))
    np.testing.assert_allclose(
        radon_nikodym(q, ps) * radon_nikodym(ps, p), radon_nikodym(q, p), rtol=1e-12
    )


def test_kl_support_violation():
    g = ReturnGrid(0.0, 1.0, 2)
    q = GridMeasure(g, np.array([0.5, 0.5]))
    p = GridMeasure(g, np.array([1.0, 0.0]))
    with pytest.raises(SupportViolation):
        kl_divergence(q, p)
    with pytest.raises(SupportViolation):
        radon_nikodym(q, p)
    # the other direction is fine: 0 ln 0 = 0
    assert kl_divergence(p, q) == pytest.approx(np.log(2.0))


def test_grid_mismatch(rng):
    a = random_measure(rng, ReturnGrid(0.0, 1.0, 8))
    b = random_measure(rng, ReturnGrid(0.0, 1.1, 8))
    with pytest.raises(GridMismatch):
        kl_divergence(a, b)


@given(st.integers(0, 2**32 - 1))
def test_kl_nonnegative_and_rn_integrates_to_one(seed):
    rng = np.random.default_rng(seed)
    g = ReturnGrid(-1.0, 0.1, 21)
    q, p = random_measure(rng, g, 0.5), random_measure(rng, g, 0.5)
    assert kl_divergence(q, p) >= 0.0
    assert float(radon_nikodym(q, p) @ p.weights) == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_tilt_matches_direct_normalisation(seed, l1, l2):
    rng = np.random.default_rng(seed)
    g = ReturnGrid(-0.5, 0.05, 21)
    p = random_measure(rng, g)
    z = PayoffMatrix.calls(g, 1.0, 1.0, [0.9, 1.1])
    lam = np.array([l1, l2])
    w = p.weights * np.exp(lam @ z.payoffs)
    q = exponential_tilt(p, lam, z)
    np.testing.assert_allclose(q.weights, w / w.sum(), rtol=1e-12)
    assert log_partition(p, lam, z) == pytest.approx(np.log(w.sum()), rel=1e-12, abs=1e-12)
    # D(q||p) = lam.E^q[Z] - ln E^p[e^{lam.Z}]
    assert kl_divergence(q, p) == pytest.approx(
        lam @ z.prices(q) - log_partition(p, lam, z), abs=1e-12
    )


def test_call_payoffs_away_from_the_kink():
    g = ReturnGrid(-0.5, 0.01, 101)
    z = PayoffMatrix.calls(g, 100.0, 0.9, [100.0])
    plain = np.maximum(100 * np.exp(g.points) - 90.0, 0.0)
    kink = np.log(0.9)
    far = np.abs(g.points - kink) > 0.03
    np.testing.assert_array_equal(z.payoffs[0][far], plain[far])
    np.testing.assert_allclose(z.scaled(100.0).payoffs[0], z.payoffs[0] / 100)


def test_kink_correction_is_fourth_order():
    from modelrisk.models import BsParams, SliceContext, bs_call_price, bs_density

    ctx = SliceContext.from_rate(100.0, 0.02, 0.5)
    strikes = np.array([85.0, 97.3, 101.0, 118.0])
    exact = bs_call_price(BsParams(0.25), ctx, strikes)
    errs = []
    for n in (512, 1024, 2048):
        g = ReturnGrid.for_volatility(0.25, ctx.tau, size=n)
        z = PayoffMatrix.calls(g, ctx.spot, ctx.discount, strikes)
        errs.append(np.max(np.abs(z.prices(bs_density(BsParams(0.25), ctx, g)) - exact)))
    assert errs[2] < 1e-6
    assert errs[0] / errs[2] > 100  # about 2^8 for a fourth-order rule


def test_mass_above_uniform():
    g = ReturnGrid(0.0, 0.01, 101)
    m = GridMeasure(g, np.full(101, 1 / 101))
    assert mass_above(m, 0.25) == pytest.approx(0.75, abs=1e-12)
    assert mass_above(m, -1.0) == 1.0
    assert mass_above(m, 2.0) == 0.0


def test_truncation_raises():
    from modelrisk.measure import check_truncation

    g = ReturnGrid(0.0, 1.0, 2)
    with pytest.raises(GridTooNarrow):
        check_truncation(g, 1e-6, 0.0)

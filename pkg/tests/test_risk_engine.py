import datetime as dt
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from modelrisk.calibration import CalibrationConfig
from modelrisk.measure import GridMeasure, ReturnGrid
from modelrisk.models import bs_eta2_closed_form
from modelrisk.risk_engine import (
    EngineConfig,
    Frequency,
    RiskReport,
    Schedule,
    decompose,
    estimated_makespan,
    maturity_bucket,
    run_all,
    run_schedule,
    summarize,
)
from modelrisk.cli_io.synthetic import SyntheticSpec, generate_synthetic

from conftest import random_measure

ENGINE = EngineConfig(calibration=CalibrationConfig(grid_size=1024))
D0 = dt.date(2024, 1, 2)


def test_decomposition_trivial_cases(rng, small_grid):
    q, p = random_measure(rng, small_grid), random_measure(rng, small_grid)
    d = decompose(q, p, p)
    assert d.eta2 == 0.0 and d.eta3 == pytest.approx(d.eta1, abs=1e-15) and abs(d.residual) < 1e-15
    d = decompose(p, p, q)
    assert d.eta1 == 0.0 and d.eta3 == pytest.approx(d.eta2, abs=1e-15)
    assert abs(d.cov_m1_m2) < 1e-15 and abs(d.cov_m1_m2logm2) < 1e-15


def identity_gap(d):
    return d.eta3 - (d.eta1 + (1 - d.cov_m1_m2) * d.eta2 + d.cov_m1_m2logm2)


@given(st.integers(0, 2**32 - 1), st.floats(0.2, 3.0))
def test_decomposition_identity(seed, conc):
    rng = np.random.default_rng(seed)
    g = ReturnGrid(-1.0, 2.0 / 63, 64)
    q, ps, p = (random_measure(rng, g, conc) for _ in range(3))
    d = decompose(q, ps, p)
    # the identity is exact algebra; rounding scales with the size of its terms
    scale = max(1.0, abs(d.cov_m1_m2) * d.eta2, abs(d.cov_m1_m2logm2))
    assert abs(identity_gap(d)) < 1e-10 * scale
    assert d.residual == pytest.approx(d.eta3 - d.eta1 - d.eta2, abs=1e-15)


def test_decomposition_covariances_match_their_definition(rng, small_grid):
    q, ps, p = (random_measure(rng, small_grid) for _ in range(3))
    d = decompose(q, ps, p)
    m1, m2 = q.weights / ps.weights, ps.weights / p.weights
    e = lambda f: float(f @ p.weights)  # noqa: E731
    assert d.cov_m1_m2 == pytest.approx(e(m1 * m2) - e(m1) * e(m2), abs=1e-12)
    lm = m2 * np.log(m2)
    assert d.cov_m1_m2logm2 == pytest.approx(e(m1 * lm) - e(m1) * e(lm), abs=1e-12)


def test_schedule_semantics():
    dates = [D0 + dt.timedelta(days=i) for i in range(10)]
    s = Schedule.every("3d", dates)
    assert sorted(s.recal_dates) == [dates[0], dates[3], dates[6], dates[9]]
    with pytest.raises(ValueError):
        Schedule(Frequency.DAILY, tuple(dates), frozenset(dates[1:]))
    assert [f.days for f in Frequency] == [1, 3, 5, 10, 63]


@pytest.mark.parametrize("tau,label", [(0.1, "0-0.2"), (0.2, "0.2-0.7"), (0.69, "0.2-0.7"), (0.7, ">0.7"), (3.0, ">0.7")])
def test_maturity_buckets(tau, label):
    assert maturity_bucket(tau) == label


def report(value, model="bs", freq="1d", tau=0.5):
    return RiskReport(D0, D0, tau, model, freq, maturity_bucket(tau), value, 0.0, value, value, 0.0, 0.0, 0.0, True)


def test_summary_of_identical_values():
    t = summarize([report(0.3)] * 7)
    for stat in ("mean", "median", "q99", "q95", "q90", "q75"):
        assert t.get("bs", "1d", "all", "aggregate", stat) == pytest.approx(0.3)


def test_summary_quantile_convention():
    t = summarize([report(float(v)) for v in (1, 2, 3, 4, 5)])
    assert t.get("bs", "1d", "all", "calibration", "q75") == 4.0
    assert t.get("bs", "1d", "all", "calibration", "median") == 3.0


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.randoms())
def test_summary_is_permutation_invariant(values, rnd):
    reps = [report(v, tau=0.1 + 0.05 * i) for i, v in enumerate(values)]
    shuffled = list(reps)
    rnd.shuffle(shuffled)
    assert summarize(reps).cells == summarize(shuffled).cells


@pytest.fixture(scope="module")
def stepped_market():
    spec = SyntheticSpec(
        model="bs",
        start_params={"sigma": 0.2},
        end_params={"sigma": 0.3},
        step_day=4,
        n_days=8,
        expiry_offsets=(200,),
    )
    return generate_synthetic(spec).slices


def test_stepped_volatility_daily(stepped_market):
    res = run_schedule(stepped_market, "bs", Schedule.every("1d", [s.date for s in stepped_market]), ENGINE)
    assert not res.gaps
    step = res.reports[4]
    assert step.eta2 == pytest.approx(bs_eta2_closed_form(0.2, 0.3, step.tau), abs=1e-4)
    for i, r in enumerate(res.reports):
        assert abs(identity_gap(r)) < 1e-9
        if i != 4:
            assert r.eta2 < 1e-8
        if r.recalibrated and i > 0:
            assert r.eta3_hat <= r.eta3 + 1e-12


def test_stepped_volatility_quarterly(stepped_market):
    res = run_schedule(stepped_market, "bs", Schedule.every("1q", [s.date for s in stepped_market]), ENGINE)
    assert [r.recalibrated for r in res.reports] == [True] + [False] * 7
    assert all(r.eta2 == 0.0 for r in res.reports[1:])
    assert all(r.eta1 > 1e-3 for r in res.reports[4:])
    assert all(r.eta1 < 1e-8 for r in res.reports[:4])


def test_stationary_heston_market_has_no_model_risk():
    spec = SyntheticSpec(n_days=4, expiry_offsets=(300,))
    res = run_all(generate_synthetic(spec).slices, ["heston"], ["1d"], ENGINE)
    assert not res.gaps
    assert np.mean([r.eta1 for r in res.reports]) < 1e-6
    assert np.mean([r.eta2 for r in res.reports]) < 1e-6


def test_failures_become_gaps(stepped_market):
    empty = stepped_market[2].with_quotes(())
    series = list(stepped_market[:2]) + [empty] + list(stepped_market[3:5])
    res = run_schedule(series, "bs", Schedule.every("1d", [s.date for s in series]), ENGINE)
    assert [g.code for g in res.gaps] == ["insufficient_quotes"]
    assert len(res.reports) == 4


def test_run_all_is_ordered_and_parallel_safe(stepped_market):
    serial = run_all(stepped_market[:4], ["bs"], ["1d", "3d"], ENGINE)
    par = run_all(stepped_market[:4], ["bs"], ["1d", "3d"], EngineConfig(ENGINE.calibration, workers=2))
    assert serial.reports == par.reports
    assert [r.frequency for r in serial.reports] == ["1d"] * 4 + ["3d"] * 4


def test_makespan_assigns_longest_lanes_first():
    # greedy longest-first: {5, 3, 3} and {4, 3}, not the optimal 9
    assert estimated_makespan([5.0, 4.0, 3.0, 3.0, 3.0], 2) == 10.0
    assert estimated_makespan([5.0, 1.0], 4) == 5.0
    assert estimated_makespan([2.0, 2.0, 2.0], 1) == 6.0
    assert estimated_makespan([], 4) == 0.0

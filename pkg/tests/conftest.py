import datetime as dt
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from modelrisk.cli_io.market import MarketSlice, Quote
from modelrisk.measure import GridMeasure, ReturnGrid
from modelrisk.models import BsParams, SliceContext, bs_call_price

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_measure(rng, grid, concentration=1.0):
    w = rng.gamma(concentration, size=grid.size) + 1e-12
    return GridMeasure(grid, w / w.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_grid():
    return ReturnGrid(-1.0, 2.0 / 63, 64)


def bs_slice(sigma=0.25, days=180, spot=100.0, rate=0.02, spread=0.01, ks=(-1.0, -0.5, 0.0, 0.5, 1.0)):
    date = dt.date(2024, 3, 1)
    s = MarketSlice(date, date + dt.timedelta(days=days), spot, rate)
    ctx = s.context()
    sd = sigma * np.sqrt(ctx.tau)
    strikes = ctx.forward * np.exp(np.asarray(ks) * sd)
    prices = bs_call_price(BsParams(sigma), ctx, strikes)
    quotes = [Quote(float(k), max(float(p - spread / 2), 0.0), float(p + spread / 2), 10) for k, p in zip(strikes, prices)]
    return s.with_quotes(quotes)


@pytest.fixture
def ctx():
    return SliceContext.from_rate(100.0, 0.02, 0.5)

"""Synthetic option markets with a known parameter path, for oracle tests and experiments."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..calibration import PARAM_NAMES, ModelKind, ModelSpec
from ..models import BsParams, SliceContext, bs_call_price, bs_implied_vol, heston_call_prices
from .market import MarketSlice, Quote


@dataclass(frozen=True)
class SyntheticSpec:
    """Scenario definition.

    Parameters move linearly from ``start_params`` to ``end_params`` over the
    run, or jump at ``step_day`` (a trading-day index) when it is set.
    ``noise`` (one scale for all, or per name including ``v``) perturbs each
    day's values independently: multiplicatively (lognormal, unit mean) for
    positive quantities, additively for the correlation (clipped to +-0.95).
    ``iv_noise`` adds independent noise to each quote's implied volatility
    (absolute, in volatility units), a stand-in for quote-level effects no
    model explains; it can break static no-arbitrage. ``event_prob`` does not:
    it adds a binary event before expiry that multiplies the spot by ``e^J`` with
    that probability and by ``d = (1 - p e^J) / (1 - p)`` otherwise, so quotes are
    the mixture ``p C(S e^J) + (1 - p) C(S d)`` of model prices. The terminal law
    is then bimodal and outside both model families.
    """

    model: str = "heston"
    start_params: dict = field(default_factory=lambda: {"kappa": 2.0, "theta_lr": 0.04, "eta_vv": 0.5, "rho": -0.6})
    end_params: dict | None = None
    v_start: float = 0.05
    v_end: float | None = None
    step_day: int | None = None
    noise: float | dict = 0.0
    n_days: int = 250
    start_date: dt.date = dt.date(2024, 1, 2)
    spot: float = 100.0
    spot_vol: float = 0.0
    rate: float = 0.02
    expiry_offsets: tuple = (400, 550, 750)
    moneyness: tuple = (-1.6, -1.28, -0.96, -0.64, -0.32, 0.0, 0.32, 0.64, 0.96, 1.28, 1.6)
    iv_noise: float = 0.0
    event_prob: float = 0.0
    event_jump: float = 0.0
    spread: float = 0.01
    volume: int = 100

    def __post_init__(self):
        object.__setattr__(self, "model", ModelKind(self.model).value)
        names = PARAM_NAMES[ModelKind(self.model)]
        for p in (self.start_params, self.end_params or self.start_params):
            if set(p) != set(names):
                raise ValueError(f"{self.model} parameters must be exactly {names}")
        if self.n_days < 1:
            raise ValueError("n_days must be positive")
        if self.spread < 0:
            raise ValueError("spread must be nonnegative")
        if not 0.0 <= self.event_prob < 1.0 or self.event_prob * math.exp(self.event_jump) >= 1.0:
            raise ValueError("event_prob must lie in [0, 1) with event_prob * exp(event_jump) < 1")
        if self.step_day is not None and self.end_params is None:
            raise ValueError("a step needs end_params")

    @classmethod
    def from_dict(cls, data):
        """Build from JSON-style values (ISO date string, lists for tuples)."""
        data = dict(data)
        if isinstance(data.get("start_date"), str):
            data["start_date"] = dt.date.fromisoformat(data["start_date"])
        for key in ("expiry_offsets", "moneyness"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    def noise_scales(self):
        names = PARAM_NAMES[ModelKind(self.model)] + (("v",) if self.model == "heston" else ())
        if isinstance(self.noise, dict):
            unknown = set(self.noise) - set(names)
            if unknown:
                raise ValueError(f"noise given for unknown names {sorted(unknown)}")
            return {n: float(self.noise.get(n, 0.0)) for n in names}
        return {n: float(self.noise) for n in names}

    def trading_days(self):
        days, d = [], self.start_date
        while len(days) < self.n_days:
            if d.weekday() < 5:
                days.append(d)
            d += dt.timedelta(days=1)
        return days


@dataclass(frozen=True)
class SyntheticMarket:
    slices: tuple
    truth: tuple  # (date, ModelSpec) per trading day


def _path_value(spec, i, a, b):
    if b is None:
        return a
    if spec.step_day is not None:
        return b if i >= spec.step_day else a
    w = i / max(spec.n_days - 1, 1)
    return (1.0 - w) * a + w * b


def _truth_path(spec, rng):
    kind = ModelKind(spec.model)
    names = PARAM_NAMES[kind]
    out = []
    for i in range(spec.n_days):
        vals = {
            n: _path_value(spec, i, spec.start_params[n], spec.end_params and spec.end_params[n])
            for n in names
        }
        if kind is ModelKind.HESTON:
            vals["v"] = _path_value(spec, i, spec.v_start, spec.v_end)
        scales = spec.noise_scales()
        if any(scales.values()):
            eps = rng.standard_normal(len(vals))
            for e, n in zip(eps, sorted(vals)):
                sc = scales.get(n, 0.0)
                if n == "rho":
                    vals[n] = float(np.clip(vals[n] + sc * e, -0.95, 0.95))
                else:
                    vals[n] *= math.exp(sc * e - 0.5 * sc * sc)
        if kind is ModelKind.BS:
            out.append(ModelSpec.bs(vals["sigma"]))
        else:
            out.append(ModelSpec.heston(**vals))
    return out


def _prices(model, ctx, strikes):
    if model.kind is ModelKind.BS:
        return np.array([bs_call_price(model.params, ctx, k) for k in strikes])
    return heston_call_prices(model.params, model.state, ctx, strikes)


def _event_prices(spec, model, ctx, strikes):
    p = spec.event_prob
    up = math.exp(spec.event_jump)
    down = (1.0 - p * up) / (1.0 - p)
    out = 0.0
    for w, f in ((p, up), (1.0 - p, down)):
        moved = SliceContext(spot=ctx.spot * f, discount=ctx.discount, tau=ctx.tau, rate=ctx.rate)
        out = out + w * _prices(model, moved, strikes)
    return out


def _atm_sigma(model):
    if model.kind is ModelKind.BS:
        return model.params.sigma
    return math.sqrt(max(model.state.v, 1e-4))


def generate_synthetic(spec, seed=0):
    """Exact model prices +- half the spread as bid/ask, one slice per (date, expiry).

    Strikes sit at fixed standardized log-moneyness ``k`` around the forward,
    ``K = F exp(k s sqrt(tau))`` with ``s`` the model's instantaneous volatility.
    A pure function of ``(spec, seed)``.
    """
    rng = np.random.default_rng(seed)
    days = spec.trading_days()
    truth = _truth_path(spec, rng)
    spot_shocks = rng.standard_normal(len(days))
    iv_shocks = rng.standard_normal((len(days), len(spec.expiry_offsets), len(spec.moneyness)))
    expiries = [spec.start_date + dt.timedelta(days=o) for o in spec.expiry_offsets]

    slices, spot = [], spec.spot
    dt_year = 1.0 / 252.0
    for i, (day, model) in enumerate(zip(days, truth)):
        if i > 0 and spec.spot_vol > 0:
            spot *= math.exp(spec.spot_vol * math.sqrt(dt_year) * spot_shocks[i] - 0.5 * spec.spot_vol**2 * dt_year)
        for e, exp in enumerate(expiries):
            if exp <= day:
                continue
            s = MarketSlice(day, exp, float(spot), spec.rate)
            ctx = s.context()
            sd = _atm_sigma(model) * math.sqrt(ctx.tau)
            strikes = ctx.forward * np.exp(np.asarray(spec.moneyness) * sd)
            if spec.event_prob > 0:
                prices = _event_prices(spec, model, ctx, strikes)
            else:
                prices = _prices(model, ctx, strikes)
            if spec.iv_noise > 0:
                prices = np.array([
                    bs_call_price(BsParams(max(bs_implied_vol(ctx, k, p) + spec.iv_noise * z, 1e-3)), ctx, k)
                    for k, p, z in zip(strikes, prices, iv_shocks[i, e])
                ])
            half = 0.5 * spec.spread
            quotes = tuple(
                Quote(float(k), float(max(p - half, 0.0)), float(p + half), spec.volume)
                for k, p in zip(strikes, prices)
            )
            slices.append(s.with_quotes(quotes))
    return SyntheticMarket(tuple(slices), tuple(zip(days, truth)))


def write_truth_csv(market, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = None
        for date, model in market.truth:
            vals = model.values()
            if names is None:
                names = list(vals)
                w.writerow(["date", "model", *names])
            w.writerow([date.isoformat(), model.kind.value, *(repr(vals[n]) for n in names)])



def frequency_sweep_spec(n_days=250):
    """Drifting Heston market for the recalibration-frequency experiment.

    Parameters and variance state drift linearly over the period, with
    independent multiplicative daily perturbations of 15% around the drift.
    Three fixed expiries are quoted with one-cent spreads.
    """
    return SyntheticSpec(
        model="heston",
        start_params={"kappa": 2.0, "theta_lr": 0.04, "eta_vv": 0.5, "rho": -0.6},
        end_params={"kappa": 2.5, "theta_lr": 0.05, "eta_vv": 0.6, "rho": -0.5},
        v_start=0.04,
        v_end=0.05,
        noise=0.15,
        n_days=n_days,
        expiry_offsets=(400, 550, 750),
    )

"""Calibration error, recalibration risk and aggregate model risk over recalibration schedules."""

from __future__ import annotations

import datetime as dt
import enum
import heapq
import logging
import math
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .calibration import (
    CalibrationConfig,
    ModelKind,
    alternating_calibrate,
    fit_reference_to_frozen_model,
)
from .errors import InsufficientQuotes, ModelRiskError
from .measure import kl_divergence, radon_nikodym

log = logging.getLogger(__name__)


class Frequency(str, enum.Enum):
    DAILY = "1d"
    EVERY3DAYS = "3d"
    WEEKLY = "1w"
    BIWEEKLY = "2w"
    QUARTERLY = "1q"

    @property
    def days(self):
        return _TRADING_DAYS[self]


_TRADING_DAYS = {
    Frequency.DAILY: 1,
    Frequency.EVERY3DAYS: 3,
    Frequency.WEEKLY: 5,
    Frequency.BIWEEKLY: 10,
    Frequency.QUARTERLY: 63,
}


@dataclass(frozen=True)
class Schedule:
    frequency: Frequency
    dates: tuple
    recal_dates: frozenset

    def __post_init__(self):
        if not self.dates:
            raise ValueError("schedule needs at least one date")
        if list(self.dates) != sorted(set(self.dates)):
            raise ValueError("schedule dates must be strictly increasing")
        if not self.recal_dates <= set(self.dates):
            raise ValueError("recalibration dates must be schedule dates")
        if self.dates[0] not in self.recal_dates:
            raise ValueError("the first date must be a recalibration date")

    @classmethod
    def every(cls, frequency, dates):
        """Recalibrate on the first date and every ``frequency.days`` trading days after."""
        frequency = Frequency(frequency)
        dates = tuple(sorted(dates))
        return cls(frequency, dates, frozenset(dates[:: frequency.days]))


@dataclass(frozen=True)
class Decomposition:
    eta1: float
    eta2: float
    eta3: float
    residual: float
    cov_m1_m2: float
    cov_m1_m2logm2: float


def decompose(q_today, p_recal, p_stale):
    """Split D(q || p_stale) through the recalibrated model p_recal.

    With m1 = dq/dp_recal and m2 = dp_recal/dp_stale, covariances are taken
    under p_stale, where D(q||p_stale) = eta1 + (1 - cov(m1, m2)) eta2 + cov(m1, m2 ln m2).
    Products m1 m2 p_stale are evaluated as q to keep every term bounded.
    """
    m1 = radon_nikodym(q_today, p_recal)
    m2 = radon_nikodym(p_recal, p_stale)
    eta1 = kl_divergence(q_today, p_recal)
    eta2 = kl_divergence(p_recal, p_stale)
    eta3 = kl_divergence(q_today, p_stale)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_m2 = np.where(m2 > 0, np.log(np.where(m2 > 0, m2, 1.0)), 0.0)
    pw, qw, rw = p_stale.weights, q_today.weights, p_recal.weights
    e_m1 = float(pw @ m1)
    cov12 = 1.0 - e_m1
    cov12l = float(qw @ log_m2) - e_m1 * float(rw @ log_m2)
    return Decomposition(eta1, eta2, eta3, eta3 - eta1 - eta2, cov12, cov12l)


def maturity_bucket(tau, edges=(0.2, 0.7)):
    lo = 0.0
    for hi in edges:
        if tau < hi:
            return f"{_fmt_edge(lo)}-{_fmt_edge(hi)}"
        lo = hi
    return f">{_fmt_edge(lo)}"


def _fmt_edge(x):
    return f"{x:g}"


@dataclass(frozen=True)
class RiskReport:
    date: dt.date
    expiry: dt.date
    tau: float
    model: str
    frequency: str
    maturity_bucket: str
    eta1: float
    eta2: float
    eta3: float
    eta3_hat: float
    residual: float
    cov_m1_m2: float
    cov_m1_m2logm2: float
    recalibrated: bool


@dataclass(frozen=True)
class Gap:
    date: dt.date
    expiry: dt.date
    model: str
    frequency: str
    code: str
    message: str


@dataclass(frozen=True)
class EngineConfig:
    calibration: CalibrationConfig = CalibrationConfig()
    bucket_edges: tuple = (0.2, 0.7)
    workers: int = 1


@dataclass
class _Outcome:
    value: object = None
    error: ModelRiskError | None = None


@dataclass
class SliceCache:
    """Memoized calibrations and frozen-model reference fits, keyed by slice and model.

    Results depend only on the slice and model inputs, so lanes with different
    recalibration frequencies can share them.
    """

    grids: dict = field(default_factory=dict)
    calibrations: dict = field(default_factory=dict)
    references: dict = field(default_factory=dict)

    @staticmethod
    def _run(fn):
        try:
            return _Outcome(value=fn())
        except ModelRiskError as exc:
            return _Outcome(error=exc)

    def grid(self, slice_, config):
        key = (slice_.date, slice_.expiry)
        if key not in self.grids:
            self.grids[key] = self._run(lambda: slice_.grid(config.grid_size))
        return self.grids[key]

    def calibration(self, slice_, kind, config):
        key = (slice_.date, slice_.expiry, kind)
        if key not in self.calibrations:
            g = self.grid(slice_, config)
            self.calibrations[key] = (
                g if g.error else self._run(lambda: alternating_calibrate(slice_, kind, config, grid=g.value))
            )
        return self.calibrations[key]

    def reference(self, slice_, frozen, config):
        key = (slice_.date, slice_.expiry, frozen.kind, tuple(frozen.values().items()))
        if key not in self.references:
            g = self.grid(slice_, config)
            self.references[key] = (
                g
                if g.error
                else self._run(
                    lambda: fit_reference_to_frozen_model(slice_, frozen, True, config, grid=g.value)
                )
            )
        return self.references[key]


@dataclass(frozen=True)
class LaneResult:
    reports: tuple
    gaps: tuple
    lane_seconds: tuple = ()  # wall time per (model, expiry) lane, from run_all


def run_schedule(series, kind, schedule, config=EngineConfig(), cache=None):
    """Reports for one maturity under one recalibration schedule.

    ``series`` holds the slices of a single expiry. On recalibration dates the
    model is calibrated afresh and the full decomposition against the previous
    calibration is reported; in between, the stale model is kept and all risk
    is calibration error of the reference measure fitted to it. Failures are
    recorded as gaps and never abort the lane.
    """
    kind = ModelKind(kind)
    cache = cache if cache is not None else SliceCache()
    cal_cfg = config.calibration
    by_date = {s.date: s for s in series}
    if len({s.expiry for s in series}) > 1:
        raise ValueError("run_schedule expects the slices of one expiry")
    reports, gaps = [], []
    last = None  # (date, calibrated spec) of the latest successful recalibration
    freq = schedule.frequency.value

    for date in schedule.dates:
        s = by_date.get(date)
        if s is None:
            continue

        def gap(exc):
            gaps.append(Gap(date, s.expiry, kind.value, freq, exc.code, str(exc)))

        if s.is_empty:
            gap(InsufficientQuotes("no quotes left after filtering"))
            continue
        recal = date in schedule.recal_dates or last is None
        bucket = maturity_bucket(s.tau, config.bucket_edges)
        if recal:
            out = cache.calibration(s, kind, cal_cfg)
            if out.error:
                gap(out.error)
                continue
            cal = out.value
            ctx, grid = s.context(), cal.q_star.grid
            theta = cal.theta_star
            if last is None:
                stale = theta
            else:
                stale = last[1]
                if kind is ModelKind.HESTON:
                    # today's variance state, yesterday's parameters
                    stale = stale.with_values(v=theta.state.v)
            try:
                p_stale = cal.p_star if stale is theta else stale.density(ctx, grid)
                dec = decompose(cal.q_star, cal.p_star, p_stale)
            except ModelRiskError as exc:
                gap(exc)
                continue
            if stale is theta:
                eta3_hat = dec.eta1
            else:
                ref = cache.reference(s, stale, cal_cfg)
                if ref.error:
                    gap(ref.error)
                    continue
                eta3_hat = ref.value.divergence
            last = (date, theta)
        else:
            ref = cache.reference(s, last[1], cal_cfg)
            if ref.error:
                gap(ref.error)
                continue
            fit = ref.value
            dec = decompose(fit.q_hat, fit.p_hat, fit.p_hat)
            eta3_hat = dec.eta3
        reports.append(
            RiskReport(
                date=date,
                expiry=s.expiry,
                tau=s.tau,
                model=kind.value,
                frequency=freq,
                maturity_bucket=bucket,
                eta1=dec.eta1,
                eta2=dec.eta2,
                eta3=dec.eta3,
                eta3_hat=eta3_hat,
                residual=dec.residual,
                cov_m1_m2=dec.cov_m1_m2,
                cov_m1_m2logm2=dec.cov_m1_m2logm2,
                recalibrated=recal,
            )
        )
    return LaneResult(tuple(reports), tuple(gaps))


def _run_lane(args):
    series, kind, frequencies, config = args
    t0 = time.perf_counter()
    cache = SliceCache()
    dates = sorted(s.date for s in series)
    out = []
    for f in frequencies:
        out.append(run_schedule(series, kind, Schedule.every(f, dates), config, cache))
    return out, time.perf_counter() - t0


def run_all(slices, kinds, frequencies, config=EngineConfig()):
    """Every (model, expiry) lane under every frequency.

    Lanes are independent; with ``config.workers > 1`` they run in separate
    processes. Output order is fixed (model, frequency, expiry, date) whatever
    the execution order.
    """
    kinds = [ModelKind(k) for k in kinds]
    frequencies = [Frequency(f) for f in frequencies]
    lanes = defaultdict(list)
    for s in slices:
        lanes[s.expiry].append(s)
    jobs = [
        (sorted(lanes[e], key=lambda s: s.date), k, frequencies, config)
        for k in kinds
        for e in sorted(lanes)
    ]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_lane, jobs))
    else:
        results = [_run_lane(j) for j in jobs]
    reports, gaps = [], []
    for lane, _ in results:
        for res in lane:
            reports.extend(res.reports)
            gaps.extend(res.gaps)
    order = {k: i for i, k in enumerate(kinds)}
    forder = {f.value: i for i, f in enumerate(frequencies)}

    def key(r):
        return (order[ModelKind(r.model)], forder[r.frequency], r.expiry, r.date)

    return LaneResult(
        tuple(sorted(reports, key=key)),
        tuple(sorted(gaps, key=key)),
        tuple(t for _, t in results),
    )


def estimated_makespan(lane_seconds, workers):
    """Wall time for the given lanes on ``workers`` processes, longest lane first."""
    loads = [0.0] * max(1, workers)
    for t in sorted(lane_seconds, reverse=True):
        heapq.heapreplace(loads, loads[0] + t)
    return max(loads)


# --------------------------------------------------------------------------
# Summary statistics

QUANTITIES = {"aggregate": "eta3", "calibration": "eta1", "recalibration": "eta2"}
STATISTICS = ("mean", "median", "q99", "q95", "q90", "q75")
ALL_BUCKET = "all"


@dataclass(frozen=True)
class StatsTable:
    """``cells[(model, frequency, bucket, quantity, statistic)]``; quantiles interpolate linearly."""

    cells: dict
    models: tuple
    frequencies: tuple
    buckets: tuple

    def get(self, model, frequency, bucket, quantity, statistic):
        return self.cells.get((model, frequency, bucket, quantity, statistic), math.nan)


def _stats(values):
    v = np.sort(np.asarray(values, dtype=float))
    return {
        "mean": float(np.mean(v)),
        "median": float(np.quantile(v, 0.5)),
        "q99": float(np.quantile(v, 0.99)),
        "q95": float(np.quantile(v, 0.95)),
        "q90": float(np.quantile(v, 0.90)),
        "q75": float(np.quantile(v, 0.75)),
    }


def bucket_labels(edges=(0.2, 0.7)):
    bounds = (0.0,) + tuple(edges)
    labels = [f"{_fmt_edge(a)}-{_fmt_edge(b)}" for a, b in zip(bounds[:-1], bounds[1:])]
    return tuple(labels) + (f">{_fmt_edge(edges[-1])}",)


def summarize(reports, edges=(0.2, 0.7)):
    """Pooled statistics per (model, frequency, maturity bucket), plus the ``all`` bucket.

    Values are sorted before reduction, so the result does not depend on the
    order of ``reports``.
    """
    if not reports:
        raise ValueError("nothing to summarize")
    groups = defaultdict(list)
    for r in reports:
        groups[(r.model, r.frequency, maturity_bucket(r.tau, edges))].append(r)
        groups[(r.model, r.frequency, ALL_BUCKET)].append(r)
    cells = {}
    for (model, freq, bucket), rs in groups.items():
        for qname, attr in QUANTITIES.items():
            for stat, val in _stats([getattr(r, attr) for r in rs]).items():
                cells[(model, freq, bucket, qname, stat)] = val
    models = tuple(m.value for m in ModelKind if any(r.model == m.value for r in reports))
    freqs = tuple(f.value for f in Frequency if any(r.frequency == f.value for r in reports))
    return StatsTable(cells, models, freqs, bucket_labels(edges) + (ALL_BUCKET,))


def frequency_profile(reports):
    """Mean (eta1, eta2, eta3) per model and frequency, frequencies in schedule order."""
    groups = defaultdict(list)
    for r in reports:
        groups[(r.model, r.frequency)].append(r)
    out = {}
    for m in ModelKind:
        for f in Frequency:
            rs = groups.get((m.value, f.value))
            if rs:
                out.setdefault(m.value, {})[f.value] = tuple(
                    float(np.mean(sorted(getattr(r, a) for r in rs))) for a in ("eta1", "eta2", "eta3")
                )
    return out

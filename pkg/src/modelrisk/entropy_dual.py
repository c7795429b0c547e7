"""Minimum relative entropy reweighting of a grid measure under bid/ask price bands.

The primal problem ``min_Q D(Q||P)  s.t.  B <= E^Q[Z] <= A`` is solved through
its dual in the combined multiplier ``lam = lam_B + lam_A``::

    max_lam  -ln E^P[exp(lam.Z)] + lam.(B+A)/2 - |lam|.(A-B)/2

with ``|x|`` replaced by the smooth ``2 delta ln cosh(x / (2 delta))``, whose
derivative is exactly the smoothed sign ``1 - 2/(1 + exp(x/delta))``. The root
of the gradient is found with MINPACK's hybrid dogleg method (backed by a damped
Newton ascent when it stalls) while ``delta`` is shrunk geometrically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import GridMismatch, Infeasible, MaxIterations, NumericalOverflow
from .measure import GridMeasure, PayoffMatrix, exponential_tilt, kl_divergence, log_partition

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 200
    grad_tol: float = 1e-10
    # Smoothing widths, as multiples of the curvature-matched scale in delta_schedule.
    delta_start: float = 1.0
    delta_min: float = 1e-6
    delta_shrink: float = 10.0
    feasibility_tol: float = 1e-9


@dataclass(frozen=True, eq=False)
class PriceBands:
    bids: np.ndarray
    asks: np.ndarray
    instruments: PayoffMatrix

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.bids, dtype=float))
        a = np.atleast_1d(np.asarray(self.asks, dtype=float))
        n = self.instruments.n_instruments
        if b.shape != (n,) or a.shape != (n,):
            raise ValueError(f"expected {n} bids and asks, got {b.shape} and {a.shape}")
        if np.any(b > a):
            raise ValueError("bids must not exceed asks")
        object.__setattr__(self, "bids", b)
        object.__setattr__(self, "asks", a)

    @property
    def mid(self):
        return 0.5 * (self.bids + self.asks)

    @property
    def half_spread(self):
        return 0.5 * (self.asks - self.bids)

    def residuals(self, prices):
        """Signed distance of ``prices`` outside the band (zero inside)."""
        return np.where(prices > self.asks, prices - self.asks, 0.0) + np.where(
            prices < self.bids, prices - self.bids, 0.0
        )


@dataclass(frozen=True, eq=False)
class DualSolution:
    lambda_plus: np.ndarray
    q: GridMeasure
    dual_value: float
    residuals: np.ndarray
    divergence: float
    delta: float
    iterations: int


def smoothed_sign(x, delta):
    # 1 - 2/(1 + e^{x/delta}) == tanh(x / (2 delta)); tanh cannot overflow.
    with np.errstate(over="ignore"):
        return np.tanh(np.asarray(x, dtype=float) / (2.0 * delta))


def _smooth_abs(x, delta):
    """``2 delta ln cosh(x / (2 delta))``: zero at 0, ``|x| - 2 delta ln 2`` in the tails."""
    a = np.abs(np.asarray(x, dtype=float)) / (2.0 * delta)
    return 2.0 * delta * (a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0))


def _tilt_moments(p, lam, z):
    q = exponential_tilt(p, lam, z)
    return q, z.payoffs @ q.weights


def dual_objective(lambda_plus, p, bands, delta=None):
    """Dual value and its gradient in ``lambda_plus``.

    ``delta=None`` uses the exact ``|lam|`` and ``sign``; instruments with zero
    spread contribute no penalty either way.
    """
    lam = np.atleast_1d(np.asarray(lambda_plus, dtype=float))
    z = bands.instruments
    hs = bands.half_spread
    _, ez = _tilt_moments(p, lam, z)
    if delta is None:
        pen, sgn = np.abs(lam), np.sign(lam)
    else:
        pen, sgn = _smooth_abs(lam, delta), smoothed_sign(lam, delta)
    value = -log_partition(p, lam, z) + lam @ bands.mid - pen @ hs
    grad = bands.mid - sgn * hs - ez
    return float(value), grad


def _dual_jacobian(q, z, ez, lam, hs, delta):
    zc = z.payoffs - ez[:, None]
    cov = (zc * q.weights) @ zc.T
    jac = -cov
    if delta is not None:
        t = smoothed_sign(lam, delta)
        jac -= np.diag(hs * (1.0 - t * t) / (2.0 * delta))
    return jac


def _dedupe(bands):
    """Merge duplicate strikes by intersecting their bands; returns (bands, index map)."""
    k = bands.instruments.strikes
    uniq, first, inverse = np.unique(k, return_index=True, return_inverse=True)
    if len(uniq) == len(k):
        return bands, np.arange(len(k))
    bids = np.full(len(uniq), -np.inf)
    asks = np.full(len(uniq), np.inf)
    np.maximum.at(bids, inverse, bands.bids)
    np.minimum.at(asks, inverse, bands.asks)
    if np.any(bids > asks):
        raise Infeasible("duplicate strikes carry disjoint bid/ask bands")
    return PriceBands(bids, asks, bands.instruments.subset(first)), inverse


def check_feasible(bands, tol=1e-9):
    """Smallest uniform band violation achievable by any measure on the grid.

    Solved as a linear program on the probability simplex; raises Infeasible
    when the optimum exceeds ``tol`` (in units of the payoffs).
    """
    z = bands.instruments.payoffs
    n, m = z.shape
    # variables: weights (m), slack t
    c = np.zeros(m + 1)
    c[-1] = 1.0
    ub = np.vstack([np.hstack([z, -np.ones((n, 1))]), np.hstack([-z, -np.ones((n, 1))])])
    rhs = np.concatenate([bands.asks, -bands.bids])
    eq = np.hstack([np.ones((1, m)), np.zeros((1, 1))])
    res = optimize.linprog(
        c, A_ub=ub, b_ub=rhs, A_eq=eq, b_eq=[1.0], bounds=[(0, None)] * (m + 1), method="highs"
    )
    if res.status != 0:
        raise Infeasible(f"feasibility program failed: {res.message}")
    if res.x[-1] > tol:
        raise Infeasible(f"no grid measure prices within the bands (max violation {res.x[-1]:.3e})")
    return float(res.x[-1])


def _solve_stage(p, bands, lam0, delta, config):
    """Root of the dual gradient at fixed ``delta``.

    MINPACK's hybrid dogleg method runs first; if it stalls short of
    ``grad_tol`` a damped Newton ascent on the concave dual takes over from the
    better of the two points.
    """
    z = bands.instruments
    hs = bands.half_spread

    def fun(lam):
        q, ez = _tilt_moments(p, lam, z)
        sgn = np.sign(lam) if delta is None else smoothed_sign(lam, delta)
        return bands.mid - sgn * hs - ez, _dual_jacobian(q, z, ez, lam, hs, delta)

    try:
        # a trial point can overflow the tilt; Newton below starts from lam0
        with np.errstate(invalid="ignore", over="ignore"):
            res = optimize.root(
                fun,
                lam0,
                jac=True,
                method="hybr",
                options={"xtol": 1e-15, "maxfev": config.max_iter},
            )
        nfev, lam = int(res.nfev), res.x
    except NumericalOverflow:
        nfev, lam = config.max_iter, np.array(lam0, dtype=float)
    try:
        with np.errstate(invalid="ignore", over="ignore"):
            grad, _ = fun(lam)
        ok = np.all(np.isfinite(grad))
    except NumericalOverflow:
        ok = False
    if not ok or np.max(np.abs(grad)) > np.max(np.abs(fun(lam0)[0])):
        lam = np.array(lam0, dtype=float)
    if not ok or np.max(np.abs(grad)) > config.grad_tol:
        lam, grad, n = _newton_ascent(p, bands, lam, delta, config)
        nfev += n
    return lam, grad, nfev


def _newton_ascent(p, bands, lam0, delta, config):
    """Levenberg-damped Newton on the concave dual.

    Near the optimum the dual value stops resolving progress, so a step is also
    accepted when the value is unchanged to rounding and the gradient shrinks.
    """
    lam = np.array(lam0, dtype=float)
    z, hs = bands.instruments, bands.half_spread
    value, grad = dual_objective(lam, p, bands, delta)
    nfev, mu = 1, 0.0
    for _ in range(config.max_iter):
        gnorm = np.max(np.abs(grad))
        if gnorm <= config.grad_tol:
            break
        q, ez = _tilt_moments(p, lam, z)
        neg_hess = -_dual_jacobian(q, z, ez, lam, hs, delta)
        scale = float(np.max(np.diag(neg_hess)))
        noise = 1e-14 * (1.0 + abs(value))
        for _ in range(60):
            a = neg_hess + mu * scale * np.eye(len(lam))
            try:
                step = np.linalg.solve(a, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(a, grad, rcond=None)[0]
            cand = lam + step
            try:
                cval, cgrad = dual_objective(cand, p, bands, delta)
            except NumericalOverflow:
                cval, cgrad = -np.inf, grad
            nfev += 1
            cnorm = np.max(np.abs(cgrad))
            if cval > value + noise or (cval >= value - noise and cnorm < gnorm):
                mu = 0.0 if mu < 1e-12 else mu / 10.0
                break
            mu = max(10.0 * mu, 1e-10)
        else:
            break
        lam, value, grad = cand, cval, cgrad
    return lam, grad, nfev


def delta_schedule(bands, p, config):
    """Decreasing smoothing widths, or ``[None]`` when every band is a single price.

    The first width matches the curvature of the spread penalty to that of the
    log-partition function; later stages shrink it geometrically.
    """
    hs = bands.half_spread
    positive = hs[hs > 0]
    if positive.size == 0:
        return [None]
    z = bands.instruments.payoffs
    ez = z @ p.weights
    var = ((z - ez[:, None]) ** 2) @ p.weights
    var = var[var > 0]
    scale = float(np.median(positive)) / (2.0 * float(np.median(var))) if var.size else 1.0
    deltas, d = [], config.delta_start * scale
    while d >= config.delta_min * scale * (1 - 1e-12):
        deltas.append(d)
        d /= config.delta_shrink
    return deltas


def solve_inner(p, bands, config=SolverConfig(), check=True, warm_start=None):
    """Minimum-divergence measure to ``p`` pricing every instrument inside its band.

    ``warm_start`` (multipliers in currency units, e.g. from a previous solve
    against a nearby ``p``) is tried at the final smoothing width first; the
    full continuation runs only if that fails to converge.
    """
    if not bands.instruments.grid.same_as(p.grid):
        raise GridMismatch("bands and measure live on different grids")
    full = bands
    bands, inverse = _dedupe(bands)

    scale = bands.instruments.spot
    scaled = PriceBands(bands.bids / scale, bands.asks / scale, bands.instruments.scaled(scale))
    if check:
        check_feasible(scaled, config.feasibility_tol)

    deltas = delta_schedule(scaled, p, config)
    grad, nfev = None, 0
    if warm_start is not None:
        _, first = np.unique(inverse, return_index=True)
        lam = np.asarray(warm_start, dtype=float)[first] * scale
        try:
            lam, grad, nfev = _solve_stage(p, scaled, lam, deltas[-1], config)
        except NumericalOverflow:
            grad = None
        if grad is not None and np.max(np.abs(grad)) > config.grad_tol:
            grad = None
    if grad is None:
        lam = np.zeros(scaled.instruments.n_instruments)
        prev = None
        for delta in deltas:
            if prev is not None:
                # Multipliers of slack constraints scale with delta; saturated ones do not.
                lam = np.where(np.abs(lam) < 20.0 * prev, lam * (delta / prev), lam)
            lam, grad, n = _solve_stage(p, scaled, lam, delta, config)
            nfev += n
            prev = delta
    if np.max(np.abs(grad)) > config.grad_tol:
        raise MaxIterations(
            f"dual root solve stalled with gradient {np.max(np.abs(grad)):.3e} "
            f"(tolerance {config.grad_tol:.0e})"
        )

    q = exponential_tilt(p, lam, scaled.instruments)
    value, _ = dual_objective(lam, p, scaled, deltas[-1])

    # Duplicates share one multiplier, carried by the first occurrence.
    lam_full = np.zeros(full.instruments.n_instruments)
    _, first = np.unique(inverse, return_index=True)
    lam_full[first] = lam / scale
    return DualSolution(
        lambda_plus=lam_full,
        q=q,
        dual_value=value,
        residuals=full.residuals(full.instruments.prices(q)),
        divergence=kl_divergence(q, p),
        delta=deltas[-1] if deltas[-1] is not None else 0.0,
        iterations=nfev,
    )

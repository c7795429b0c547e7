"""Joint calibration of a parametric model and a non-parametric reference measure.

Starting from a least-squares price fit, the reference measure Q (closest to
the model under the bid/ask bands) and the model parameters (closest to Q) are
updated in turn until the parameters settle.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .entropy_dual import SolverConfig, solve_inner
from .errors import FitDiverged, InsufficientQuotes, ModelRiskError
from .measure import DEFAULT_GRID_SIZE, GridMeasure, kl_divergence
from .models import BsParams, HestonParams, HestonState, bs_density, heston_density

log = logging.getLogger(__name__)


class ModelKind(str, enum.Enum):
    BS = "bs"
    HESTON = "heston"


PARAM_NAMES = {
    ModelKind.BS: ("sigma",),
    ModelKind.HESTON: ("kappa", "theta_lr", "eta_vv", "rho"),
}

DEFAULT_BOUNDS = {
    "sigma": (1e-3, 5.0),
    "kappa": (1e-3, 50.0),
    "theta_lr": (1e-6, 4.0),
    "eta_vv": (1e-3, 10.0),
    "rho": (-0.999, 0.999),
    "v": (1e-6, 4.0),
}

# Optimizers work on log-parameters except for the correlation.
_LINEAR = {"rho"}


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    params: BsParams | HestonParams
    state: HestonState | None = None
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        expected = BsParams if self.kind is ModelKind.BS else HestonParams
        if not isinstance(self.params, expected):
            raise ValueError(f"{self.kind.value} model needs {expected.__name__}")
        if (self.state is not None) != (self.kind is ModelKind.HESTON):
            raise ValueError("a variance state is required for Heston and only for Heston")
        for name, value in self.values().items():
            lo, hi = self.bounds[name]
            if not lo <= value <= hi:
                raise ValueError(f"{name}={value} outside bounds [{lo}, {hi}]")

    @classmethod
    def bs(cls, sigma, **kw):
        return cls(ModelKind.BS, BsParams(sigma), **kw)

    @classmethod
    def heston(cls, kappa, theta_lr, eta_vv, rho, v, **kw):
        return cls(ModelKind.HESTON, HestonParams(kappa, theta_lr, eta_vv, rho), HestonState(v), **kw)

    def values(self):
        out = {n: float(getattr(self.params, n)) for n in PARAM_NAMES[self.kind]}
        if self.state is not None:
            out["v"] = float(self.state.v)
        return out

    def names(self, params=True, state=True):
        out = PARAM_NAMES[self.kind] if params else ()
        if state and self.kind is ModelKind.HESTON:
            out = out + ("v",)
        return out

    def with_values(self, **values):
        cur = self.values()
        cur.update(values)
        if self.kind is ModelKind.BS:
            return replace(self, params=BsParams(cur["sigma"]))
        p = HestonParams(*(cur[n] for n in PARAM_NAMES[ModelKind.HESTON]))
        return replace(self, params=p, state=HestonState(cur["v"]))

    def density(self, ctx, grid):
        if self.kind is ModelKind.BS:
            return bs_density(self.params, ctx, grid)
        return heston_density(self.params, self.state, ctx, grid)

    def relative_change(self, other, floor=1e-8):
        """Largest per-parameter change, relative where the magnitude allows."""
        a, b = self.values(), other.values()
        out = 0.0
        for n in a:
            if abs(a[n]) < floor:
                out = max(out, 0.0 if abs(b[n] - a[n]) < floor else math.inf)
            else:
                out = max(out, abs(b[n] - a[n]) / abs(a[n]))
        return out


class _Coords:
    """Map a subset of a spec's parameters to unconstrained-ish optimizer coordinates."""

    def __init__(self, spec, names):
        self.spec, self.names = spec, names
        self.lo = np.array([self._fwd(n, spec.bounds[n][0]) for n in names])
        self.hi = np.array([self._fwd(n, spec.bounds[n][1]) for n in names])

    @staticmethod
    def _fwd(name, value):
        return value if name in _LINEAR else math.log(value)

    def to_x(self, spec):
        vals = spec.values()
        return np.clip([self._fwd(n, vals[n]) for n in self.names], self.lo, self.hi)

    def to_spec(self, x):
        vals = {n: (float(xi) if n in _LINEAR else math.exp(xi)) for n, xi in zip(self.names, x)}
        # exp/log round trips can leave a bound a few ulps outside itself
        for n in vals:
            lo, hi = self.spec.bounds[n]
            vals[n] = min(max(vals[n], lo), hi)
        return self.spec.with_values(**vals)

    @property
    def bounds(self):
        return list(zip(self.lo, self.hi))


@dataclass(frozen=True)
class CalibrationConfig:
    max_iter: int = 50
    param_tol: float = 1e-3
    fd_step: float = 1e-6
    lbfgs_maxiter: int = 200
    min_heston_quotes: int = 5
    grid_size: int = DEFAULT_GRID_SIZE
    solver: SolverConfig = SolverConfig()


@dataclass(frozen=True)
class TraceEntry:
    divergence: float
    max_change: float


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    theta_star: ModelSpec
    q_star: GridMeasure
    p_star: GridMeasure
    eta1: float
    iterations: int
    converged: bool
    trace: tuple
    lambda_plus: np.ndarray
    initial: ModelSpec


@dataclass(frozen=True, eq=False)
class ReferenceFit:
    q_hat: GridMeasure
    p_hat: GridMeasure
    model: ModelSpec
    divergence: float
    iterations: int
    converged: bool


# A failed model evaluation inside an optimizer is scored as this much worse
# than anything attainable, rather than aborting the fit.
_PENALTY = 1e6


def _safe_density(spec, ctx, grid):
    try:
        return spec.density(ctx, grid)
    except (ModelRiskError, ValueError, FloatingPointError):
        return None


def _start_points(kind, atm_vol):
    s2 = atm_vol * atm_vol
    if kind is ModelKind.BS:
        return [ModelSpec.bs(atm_vol * f) for f in (1.0, 0.7, 1.4)]
    return [
        ModelSpec.heston(2.0, s2, 0.5, -0.5, s2),
        ModelSpec.heston(1.0, s2, 0.3, -0.2, s2),
        ModelSpec.heston(4.0, s2, 1.0, -0.8, s2),
    ]


def initial_fit(slice_, kind, grid=None, config=CalibrationConfig()):
    """Least-squares fit of model prices (grid expectations) to quote mids.

    Bounded trust-region least squares from three fixed starting points; the
    best fit wins.
    """
    kind = ModelKind(kind)
    n = len(slice_.quotes)
    need = 1 if kind is ModelKind.BS else config.min_heston_quotes
    if n < need:
        raise InsufficientQuotes(f"{kind.value} fit needs {need} quotes, slice has {n}")
    grid = grid if grid is not None else slice_.grid(config.grid_size)
    ctx = slice_.context()
    z = slice_.payoffs(grid)
    target = slice_.mids / slice_.spot

    best, best_cost = None, math.inf
    for start in _start_points(kind, slice_.atm_vol()):
        coords = _Coords(start, start.names())

        def resid(x, coords=coords):
            p = _safe_density(coords.to_spec(x), ctx, grid)
            if p is None:
                return np.full(n, math.sqrt(_PENALTY / n))
            return z.prices(p) / slice_.spot - target

        try:
            res = optimize.least_squares(
                resid,
                coords.to_x(start),
                bounds=(coords.lo, coords.hi),
                method="trf",
                x_scale=1.0,
                ftol=1e-15,
                xtol=1e-15,
                gtol=1e-15,
                max_nfev=200 * len(coords.names),
                diff_step=1e-7,
            )
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.debug("start %s failed: %s", start, exc)
            continue
        if res.cost < best_cost:
            best, best_cost = coords.to_spec(res.x), res.cost
    if best is None or best_cost >= 0.5 * _PENALTY:
        raise FitDiverged(f"no {kind.value} starting point produced a usable fit")
    return best


def _fd_gradient(fun, x, steps):
    g = np.empty_like(x)
    for i, h in enumerate(steps):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return g


def minimize_divergence_over_params(
    q, init, ctx, free_state=True, free_params=True, config=CalibrationConfig()
):
    """Parameters (and optionally the variance state) minimizing D(q || P_theta).

    L-BFGS-B with central finite-difference gradients. The step is
    ``fd_step`` relative, which in the log coordinates used for positive
    parameters is an absolute step.
    """
    names = init.names(params=free_params, state=free_state)
    if not names:
        return init
    coords = _Coords(init, names)
    grid = q.grid

    def objective(x):
        p = _safe_density(coords.to_spec(x), ctx, grid)
        if p is None:
            return _PENALTY
        return kl_divergence(q, p)

    steps = np.array(
        [config.fd_step * (max(abs(v), 1.0) if n in _LINEAR else 1.0) for n, v in
         zip(names, coords.to_x(init))]
    )
    x0 = coords.to_x(init)
    f0 = objective(x0)
    if f0 >= _PENALTY:
        raise FitDiverged("starting parameters give no valid density")

    def fun(x):
        # keep the difference stencil inside the box
        xc = np.clip(x, coords.lo + steps, coords.hi - steps)
        return objective(xc), _fd_gradient(objective, xc, steps)

    res = optimize.minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=coords.bounds,
        options={"maxiter": config.lbfgs_maxiter, "ftol": 1e-13, "gtol": 1e-9, "maxls": 40},
    )
    f1 = objective(res.x)
    if not f1 <= f0:
        return init
    return coords.to_spec(res.x)


def alternating_calibrate(slice_, kind, config=CalibrationConfig(), grid=None, init=None):
    """Alternate reference-measure and parameter updates until the parameters settle.

    Stops when no parameter moves by more than ``param_tol`` (relative) over an
    iteration or after ``max_iter`` iterations, in which case ``converged`` is
    False. A last inner solve makes ``q_star`` optimal for ``theta_star``.
    """
    kind = ModelKind(kind)
    grid = grid if grid is not None else slice_.grid(config.grid_size)
    ctx = slice_.context()
    bands = slice_.bands(grid)
    theta = init if init is not None else initial_fit(slice_, kind, grid, config)
    initial = theta

    sol = solve_inner(theta.density(ctx, grid), bands, config.solver, check=True)
    trace = [TraceEntry(sol.divergence, math.nan)]
    converged, it = False, 0
    while it < config.max_iter:
        it += 1
        new = minimize_divergence_over_params(sol.q, theta, ctx, free_state=True, config=config)
        change = theta.relative_change(new)
        theta = new
        sol = solve_inner(
            theta.density(ctx, grid), bands, config.solver, check=False, warm_start=sol.lambda_plus
        )
        trace.append(TraceEntry(sol.divergence, change))
        if change <= config.param_tol:
            converged = True
            break
    if not converged:
        log.warning("calibration of %s on %s/%s stopped after %d iterations",
                    kind.value, slice_.date, slice_.expiry, it)
    p_star = theta.density(ctx, grid)
    return CalibrationResult(
        theta_star=theta,
        q_star=sol.q,
        p_star=p_star,
        eta1=kl_divergence(sol.q, p_star),
        iterations=it,
        converged=converged,
        trace=tuple(trace),
        lambda_plus=sol.lambda_plus,
        initial=initial,
    )


def fit_reference_to_frozen_model(
    slice_, frozen, free_state=True, config=CalibrationConfig(), grid=None
):
    """Reference measure closest to a model whose parameters are held fixed.

    For Heston with ``free_state`` the variance state is re-fitted by the same
    alternating scheme, starting from ``frozen.state``.
    """
    grid = grid if grid is not None else slice_.grid(config.grid_size)
    ctx = slice_.context()
    bands = slice_.bands(grid)
    model = frozen
    sol = solve_inner(model.density(ctx, grid), bands, config.solver, check=True)
    it, converged = 0, True
    if free_state and model.kind is ModelKind.HESTON:
        converged = False
        while it < config.max_iter:
            it += 1
            new = minimize_divergence_over_params(
                sol.q, model, ctx, free_state=True, free_params=False, config=config
            )
            change = model.relative_change(new)
            model = new
            sol = solve_inner(
                model.density(ctx, grid), bands, config.solver, check=False,
                warm_start=sol.lambda_plus,
            )
            if change <= config.param_tol:
                converged = True
                break
    p_hat = model.density(ctx, grid)
    return ReferenceFit(
        q_hat=sol.q,
        p_hat=p_hat,
        model=model,
        divergence=kl_divergence(sol.q, p_hat),
        iterations=it,
        converged=converged,
    )

"""Option-pricing model risk by relative entropy.

Calibrates Black-Scholes and Heston models jointly with a non-parametric
reference measure under bid/ask constraints, and splits aggregate model risk
into calibration error and recalibration risk over recalibration schedules.
"""

__version__ = "0.1.0"

from .calibration import (
    CalibrationConfig,
    CalibrationResult,
    ModelKind,
    ModelSpec,
    alternating_calibrate,
    fit_reference_to_frozen_model,
)
from .entropy_dual import DualSolution, PriceBands, SolverConfig, dual_objective, solve_inner
from .measure import GridMeasure, PayoffMatrix, ReturnGrid, kl_divergence
from .risk_engine import (
    EngineConfig,
    Frequency,
    RiskReport,
    Schedule,
    decompose,
    run_all,
    run_schedule,
    summarize,
)

__all__ = [
    "CalibrationConfig",
    "CalibrationResult",
    "DualSolution",
    "EngineConfig",
    "Frequency",
    "GridMeasure",
    "ModelKind",
    "ModelSpec",
    "PayoffMatrix",
    "PriceBands",
    "ReturnGrid",
    "RiskReport",
    "Schedule",
    "SolverConfig",
    "alternating_calibrate",
    "decompose",
    "dual_objective",
    "fit_reference_to_frozen_model",
    "kl_divergence",
    "run_all",
    "run_schedule",
    "solve_inner",
    "summarize",
]

"""Exception hierarchy. Every failure raised by the library derives from ModelRiskError."""


class ModelRiskError(Exception):
    """Base class; ``code`` is the short reason string written to gap records."""

    code = "error"


class GridMismatch(ModelRiskError):
    code = "grid_mismatch"


class SupportViolation(ModelRiskError):
    code = "support_violation"


class NumericalOverflow(ModelRiskError):
    code = "numerical_overflow"


class GridTooNarrow(ModelRiskError):
    code = "grid_too_narrow"


class TruncationError(ModelRiskError):
    code = "truncation"


class QuadratureFailure(ModelRiskError):
    code = "quadrature_failure"


class NoArbitrageViolation(ModelRiskError):
    code = "no_arbitrage_violation"


class Infeasible(ModelRiskError):
    code = "infeasible"


class MaxIterations(ModelRiskError):
    code = "max_iterations"


class InsufficientQuotes(ModelRiskError):
    code = "insufficient_quotes"


class FitDiverged(ModelRiskError):
    code = "fit_diverged"


class ParseError(ModelRiskError):
    code = "parse_error"


class EmptyDataset(ModelRiskError):
    code = "empty_dataset"

"""Exception types shared across the package.

Every error carries an ``exit_code`` used by the command-line layer:
2 for data/validation problems, 3 for solver failures.
"""

from __future__ import annotations


class EstimationError(Exception):
    """Base class for all package errors."""

    exit_code = 2


# ---------------------------------------------------------------------------
# Data ingestion / validation
# ---------------------------------------------------------------------------

class MissingColumn(EstimationError):
    """A mapped column is absent from the CSV header."""


class NonNumericCell(EstimationError):
    """A data cell could not be parsed as a number (includes empty cells)."""

    def __init__(self, row: int, col: str, value: str = ""):
        self.row = row
        self.col = col
        self.value = value
        super().__init__(f"non-numeric cell at data row {row}, column {col!r}: {value!r}")


class NonBinary(EstimationError):
    """A treatment or instrument column holds a value outside {0, 1}."""

    def __init__(self, column: str, row: int, value: float | None = None):
        self.column = column
        self.row = row
        self.value = value
        detail = "" if value is None else f" (value {value!r})"
        super().__init__(f"column {column!r} is not binary at row {row}{detail}")


class EmptyData(EstimationError):
    """The input has a header but no data rows, or zero observations."""


class ProbabilityOutOfRange(EstimationError):
    """A propensity value lies outside the open interval (0, 1)."""


class MethodMismatch(EstimationError):
    """An estimator was paired with probabilities fitted by the wrong method."""


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

class SolverError(EstimationError):
    """Base class for fitting/solving failures."""

    exit_code = 3


class SingularHessian(SolverError):
    """The log-likelihood Hessian is singular (rank-deficient covariates)."""


class SingularJacobian(SolverError):
    """The balancing-equation Jacobian is singular."""


class NoConvergence(SolverError):
    """The solver hit its iteration cap without meeting the tolerance."""

    def __init__(self, iterations: int, last_norm: float, what: str = "solver"):
        self.iterations = iterations
        self.last_norm = last_norm
        super().__init__(
            f"{what} did not converge after {iterations} iterations "
            f"(last moment sup-norm {last_norm:.3e})"
        )


class SeparationDetected(SolverError):
    """The instrument is perfectly predicted for some observations."""


class DivergedProbabilities(SolverError):
    """Fitted probabilities left the admissible open interval during iteration."""


class ZeroDenominator(SolverError):
    """A ratio denominator is numerically indistinguishable from zero."""


class SingularDesign(SolverError):
    """A regression design (cross-moment) matrix is not invertible."""

"""
Error hierarchy for simplex-ego
Every error carries the CLI exit code of its family (1 config, 2 data, 3 numeric, 4 objective)
"""
from typing import Optional


class SimplexEgoError(Exception):
    """Base class for all library errors"""

    exit_code = 3


class ConfigError(SimplexEgoError):
    """Invalid or unreadable run configuration"""

    exit_code = 1


# Data errors -----------------------------------------------------------------

class DataError(SimplexEgoError, ValueError):
    """Input data violates a precondition"""

    exit_code = 2


class ParseError(DataError):
    """Malformed row or non-numeric entry in a data file"""


class ShapeError(DataError):
    """Ragged rows or inconsistent array shapes"""


class NegativeValue(DataError):
    """A curve value is negative"""


class AllZero(DataError):
    """A curve has zero mean and cannot be normalized"""


class TooFewKnots(DataError):
    """Grid too small for the requested operation"""


class DimensionMismatch(DataError):
    """Vector or curve dimension does not match the model"""


class EmptySet(DataError):
    """No historical curves were supplied"""


class BadWindow(DataError):
    """Constraint window or index outside the grid"""


class BadKnots(DataError):
    """Spline knot vector is not admissible"""


class DegenerateData(DataError):
    """Too few or too concentrated points for density estimation"""


class CountExceedsData(DataError):
    """Requested more design points than available"""


# Numeric errors --------------------------------------------------------------

class NumericError(SimplexEgoError):
    """A numerical procedure failed"""

    exit_code = 3


class SingularGram(NumericError):
    """Gram matrix is not positive definite"""


class IllConditioned(NumericError):
    """Covariance stays singular after jitter escalation"""


class DuplicateInputs(NumericError):
    """Noiseless GP asked to interpolate repeated inputs"""


class NonPositiveMean(NumericError):
    """Synthesized curve has no positive mass to normalize"""


class NoFeasibleCandidate(NumericError):
    """Not even the historical skeleton passes the domain test"""


# Objective errors ------------------------------------------------------------

class ObjectiveError(SimplexEgoError):
    """The objective evaluator failed"""

    exit_code = 4

    def __init__(self, message: str, iteration: Optional[int] = None):
        if iteration is not None:
            message = f"evaluation {iteration}: {message}"
        super().__init__(message)
        self.iteration = iteration

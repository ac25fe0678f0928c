"""Exception types raised across the package.

Grouped by where they originate: input validation, numeric evaluation,
solver machinery, accounting, and the benchmark harness.  The CLI maps
validation errors to exit code 1 and compute failures to exit code 2.
"""


class NoiseDesignError(Exception):
    """Base class for all package-specific errors."""


# Input / construction problems (CLI exit code 1).


class RangeViolation(NoiseDesignError):
    """A scalar parameter is outside its admissible range."""


class DomainViolation(NoiseDesignError):
    """An operation was applied to the wrong domain kind or point."""


class NormalizationViolation(NoiseDesignError):
    """Bin masses plus the geometric tail do not sum to one."""


class ParseError(NoiseDesignError):
    """A serialized document is malformed or missing required fields."""


class IngestError(NoiseDesignError):
    """A benchmark dataset could not be read or has the wrong shape."""


# Numeric evaluation failures (CLI exit code 2).


class DivergentTail(NoiseDesignError):
    """A truncated tail series cannot reach the requested remainder bound."""


class StrictFeasibilityViolation(NoiseDesignError):
    """A mass vector has a zero or negative entry where positivity is required."""


class QuadratureFailure(NoiseDesignError):
    """Adaptive quadrature did not reach the requested tolerance."""


# Solver failures (CLI exit code 2).


class BisectionFailure(NoiseDesignError):
    """A bisection bracket does not straddle its target."""


class SingularProjection(NoiseDesignError):
    """The constraint projection is numerically singular."""


class SearchFailure(NoiseDesignError):
    """A minimizer landed on the boundary of its search bracket."""


# Accounting failures (CLI exit code 2).


class GridOverflow(NoiseDesignError):
    """A composed privacy-loss grid exceeds the configured length bound."""


class Unattainable(NoiseDesignError):
    """The requested privacy target cannot be met by this mechanism."""


class CalibrationFailure(NoiseDesignError):
    """Noise calibration could not bracket or reach the target epsilon."""


#: Errors that indicate bad input rather than a failed computation.
VALIDATION_ERRORS = (
    RangeViolation,
    DomainViolation,
    NormalizationViolation,
    ParseError,
    IngestError,
)

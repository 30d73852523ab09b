"""Exception hierarchy shared across the package.

Validation problems (bad arguments, malformed configs) and numerical
failures (degenerate metrics, diverging iterations) are kept on separate
branches so batch drivers can map them to distinct exit codes.
"""


class PhiHeatError(Exception):
    """Base class for all package-specific errors."""


class DomainError(PhiHeatError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(PhiHeatError, ValueError):
    """A configuration, grid, or model descriptor fails validation."""


class ResolutionError(PhiHeatError, ValueError):
    """A sampled field is too coarse for the requested derivative order."""


class WeightMismatchError(PhiHeatError, ValueError):
    """A field is not representable with the requested boundary weight."""


class ChartDomainError(PhiHeatError, ValueError):
    """A point lies on the blown-up locus of the requested chart."""


class SingularExpansionError(PhiHeatError, ArithmeticError):
    """An asymptotic expansion is evaluated where it diverges."""


class NumericalError(PhiHeatError, RuntimeError):
    """A numerical procedure failed (factorization, iteration, ...)."""


class MetricDegeneracyError(NumericalError):
    """The metric tensor is not positive definite at an evaluation point."""


class DegenerateInputError(NumericalError):
    """An input makes the requested diagnostic undefined (e.g. zero mass)."""


class BallEscapeError(NumericalError):
    """A fixed-point iterate left the admissible ball."""


class DivergenceError(NumericalError):
    """A fixed-point iteration stopped contracting."""

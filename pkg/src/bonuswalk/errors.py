"""Exception hierarchy.

Two families, mirrored by the CLI exit codes: :class:`ValidationError`
(bad input, exit 2) and :class:`DegeneracyError` (the numbers admit no
valid answer, exit 3).
"""


class BonusWalkError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(BonusWalkError, ValueError):
    """Malformed or out-of-range input."""


class ConfigError(ValidationError):
    """A BMS spec or run configuration could not be parsed or validated."""


class DegeneracyError(BonusWalkError, ArithmeticError):
    """The data or parameters lead to an undefined estimate."""


class EmptyData(DegeneracyError):
    """No claims at all in the data, so the moment system is undefined."""


class InsufficientDispersion(DegeneracyError):
    """Empirical dispersion at or below Poisson; no Gamma mixture fits."""


class UnreachableState(DegeneracyError):
    """The observed class has zero probability after the given tenure."""

"""Exception types shared across the package.

Everything derives from ValueError or RuntimeError so callers that do not
care about the distinction can catch the builtin bases.
"""


class ParseError(ValueError):
    """A cell in an input file could not be parsed; message carries the row number."""


class ValidationError(ValueError):
    """Data violates a container invariant (share bounds, finiteness, duplicates)."""


class DimensionError(ValueError):
    """Array shapes or index ranges are inconsistent."""


class ParameterError(ValueError):
    """A configuration value is outside its admissible range."""


class ScalingError(ValueError):
    """Column rescaling is impossible (zero-length column, bad factors)."""


class InfeasibleError(ValueError):
    """Quantities are inconsistent with the reported market size."""


class NumericalError(RuntimeError):
    """An iterative routine produced non-finite values; message carries diagnostics."""

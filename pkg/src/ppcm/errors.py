"""Exception hierarchy shared across the package."""


class PpcmError(Exception):
    """Base class for all package-specific errors."""


class ParseError(PpcmError):
    """A data file could not be parsed."""


class SchemaError(PpcmError):
    """Input data does not match the declared wave schema."""


class InvariantError(PpcmError):
    """A structural invariant of a longitudinal frame is violated."""


class ConfigError(PpcmError):
    """Invalid configuration value or option combination."""


class EstimationError(PpcmError):
    """An estimator could not produce a result from the given data."""


class DegenerateDataError(EstimationError):
    """The outcome data is degenerate for the requested model."""

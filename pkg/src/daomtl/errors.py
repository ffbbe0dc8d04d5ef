"""Exception hierarchy shared across the package."""


class DaoError(Exception):
    """Base class for every error raised by daomtl."""


class DimensionError(DaoError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(DaoError, ValueError):
    """An input lies outside the domain of a mathematical function."""


class NumericError(DaoError, FloatingPointError):
    """A NaN or infinity appeared where a finite value is required."""


class ContractError(DaoError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(DaoError, ValueError):
    """Invalid configuration value."""


class IngestionError(DaoError, ValueError):
    """A corpus file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(DaoError, ValueError):
    """A serialized record (checkpoint or snapshot) is corrupt or incompatible."""

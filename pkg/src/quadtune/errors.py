"""Exception types raised across the package."""


class QuadtuneError(Exception):
    """Base class for all package errors."""


class InvalidInputError(QuadtuneError, ValueError):
    pass


class ConfigError(QuadtuneError, ValueError):
    """Bad configuration; ``path`` names the offending field when known."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NumericalDivergenceError(QuadtuneError, FloatingPointError):
    """Raised when a simulation or optimisation step produces non-finite values."""

    def __init__(self, message, state=None):
        self.state = state
        super().__init__(message)


class EnvUsageError(QuadtuneError, RuntimeError):
    pass


class CheckpointVersionError(QuadtuneError, ValueError):
    pass

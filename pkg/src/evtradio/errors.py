"""Exception hierarchy shared by every stage of the pipeline."""


class EvtRadioError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigError(EvtRadioError, ValueError):
    """Invalid configuration or parameter outside its contract."""

    exit_code = 2

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class DomainError(EvtRadioError, ValueError):
    """Input outside the mathematical domain of an operation."""

    exit_code = 2


class NumericalError(EvtRadioError, RuntimeError):
    """An optimizer or factorization failed."""

    exit_code = 3


class GpdFitError(NumericalError):
    def __init__(self, message, best=None, diagnostics=None):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics or {}


class FactorizationError(NumericalError):
    pass


class MetadataMismatchError(ConfigError):
    """Persisted artifact metadata disagrees with the data or the scenario."""

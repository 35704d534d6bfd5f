"""Exception hierarchy shared across the package."""


class PrmLabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PrmLabError):
    """Invalid or inconsistent configuration (unknown task, bad dimensions, ...)."""


class ProtocolError(PrmLabError):
    """An operation was called in a state where it is not allowed."""


class IllegalActionError(PrmLabError):
    """An action outside the environment's action alphabet was submitted."""


class OracleUnavailableError(PrmLabError):
    """The reachable state space exceeds the enumeration cap."""


class DataError(PrmLabError):
    """Malformed or inconsistent data (length mismatch, broken replay, ...)."""


class TrainingDivergedError(PrmLabError):
    """A training loop produced a non-finite loss.

    Carries the loss reports accumulated so far in ``reports`` for diagnosis.
    """

    def __init__(self, message, reports=None):
        super().__init__(message)
        self.reports = reports or []


class SearchError(PrmLabError):
    """Search ended without any terminal candidate path."""

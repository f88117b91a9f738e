"""Exception types raised across the package."""


class RRSenseError(Exception):
    """Base class for all package errors."""


class InvalidScenarioError(RRSenseError, ValueError):
    """A scenario or radar configuration violates its invariants."""


class InvalidInputError(RRSenseError, ValueError):
    pass


class InsufficientDataError(RRSenseError, ValueError):
    """The signal is too short for the requested operation."""


class NoEstimateError(RRSenseError, ValueError):
    """An estimator had nothing to weight (no peaks, zero power, zero CM)."""


class InvalidModelError(RRSenseError, ValueError):
    pass


class TrainingError(RRSenseError, RuntimeError):
    """Regressor training diverged."""


class FormatError(RRSenseError, ValueError):
    """A binary file could not be decoded.

    ``offset`` is the byte offset at which decoding failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EvaluationError(RRSenseError, ValueError):
    pass


class ConfigError(RRSenseError, ValueError):
    pass

"""Exception types shared across the package."""


class LatnavError(Exception):
    """Base class for all package errors."""


class ConfigError(LatnavError, ValueError):
    """Invalid configuration or shape; ``key`` names the offending setting."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class ContractError(LatnavError, RuntimeError):
    pass


class EvaluationError(LatnavError, ArithmeticError):
    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message)


class TrainingError(LatnavError, ArithmeticError):
    def __init__(self, message, epoch=None, batch=None, sample=None):
        self.epoch, self.batch, self.sample = epoch, batch, sample
        super().__init__(message)


class PlanningError(LatnavError, ArithmeticError):
    def __init__(self, message, sweep=None, index=None):
        self.sweep, self.index = sweep, index
        super().__init__(message)


class FormatError(LatnavError, ValueError):
    """Malformed checkpoint, dataset, path or route file."""


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    def __init__(self, expected, actual):
        self.expected, self.actual = expected, actual
        super().__init__(f"truncated file: expected {expected} bytes, got {actual}")


class UnsupportedVersionError(FormatError):
    pass


class DisconnectedError(LatnavError):
    """No path joins the requested graph nodes."""


class NoGroundTruthError(LatnavError):
    pass

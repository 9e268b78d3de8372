"""Exception types shared across the package.

The CLI maps ``UsageError`` (and its subclasses) to exit code 1 and every
other ``TTSLabError`` to exit code 2.
"""


class TTSLabError(Exception):
    pass


class UsageError(TTSLabError, ValueError):
    """Caller passed arguments that violate an operation's preconditions."""


class ConfigError(UsageError):
    """A configuration object (spec, params, intervals) is invalid."""


class LoadError(TTSLabError):
    """A signal container or checkpoint on disk is missing or malformed."""


class NormalizationError(TTSLabError, ValueError):
    pass


class TrainingDivergedError(TTSLabError, FloatingPointError):
    def __init__(self, step: int, term: str, value: float):
        super().__init__(f"non-finite loss at step {step}: {term}={value}")
        self.step = step
        self.term = term
        self.value = value

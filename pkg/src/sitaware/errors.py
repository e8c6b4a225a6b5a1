"""Exception hierarchy shared across the package."""


class SitAwareError(Exception):
    """Base class for every error raised by this package."""

    kind = "error"


class InputError(SitAwareError, ValueError):
    kind = "input"


class ConfigError(SitAwareError, ValueError):
    kind = "config"


class DegenerateError(SitAwareError, ArithmeticError):
    """A matrix that must be positive definite is not (even after jitter)."""

    kind = "degenerate"


class SupportError(SitAwareError, ValueError):
    """Too few points to estimate a distribution."""

    kind = "support"


class NumericError(SitAwareError, ArithmeticError):
    kind = "numeric"


class PlanningError(SitAwareError, RuntimeError):
    kind = "planning"


class ParseError(SitAwareError, ValueError):
    """Malformed persisted document; ``location`` points at the offending spot."""

    kind = "parse"

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class TrainingError(SitAwareError, RuntimeError):
    kind = "training"


class NotFoundError(SitAwareError, FileNotFoundError):
    kind = "not_found"

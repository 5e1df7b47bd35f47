"""Exception types shared across the package."""


class UsageError(ValueError):
    """Bad arguments: out-of-range indices, length mismatches, empty inputs."""


class InconsistentObservationError(ValueError):
    """An observation has zero likelihood under every state in the belief support."""


class ConfigError(ValueError):
    """Invalid configuration. ``field`` names the offending key when known."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class NumericError(ArithmeticError):
    """Non-finite scores or gradients."""


class SizeError(ValueError):
    """Instance too large for exhaustive enumeration."""


class UndefinedStatisticError(ValueError):
    """A statistic is undefined for the given sample (zero weight or zero variance)."""

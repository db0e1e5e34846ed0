"""Error types shared across the package."""


class ContractViolation(ValueError):
    """An argument breaks a documented precondition (dimension, sign, range)."""


class ConfigError(ValueError):
    """A run configuration is structurally invalid; the message names the key."""


class InfeasibleParameters(ValueError):
    """A theorem parameter box cannot be satisfied; names the binding constraint."""


class NumericalFailure(RuntimeError):
    """An iterative numerical routine failed to reach its tolerance."""


class Diverged(RuntimeError):
    """A solver iterate left the finite range. Carries the offending record."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record

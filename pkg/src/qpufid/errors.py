"""Exception types shared across the package."""


class DimensionMismatch(ValueError):
    """Two states or operators live in Hilbert spaces of different size."""


class QueryBudgetExhausted(RuntimeError):
    """A device or transit window refused a query because its cap was reached."""


class CopyExhausted(RuntimeError):
    """The verifier's database ran out of stored response copies."""


class ConfigError(ValueError):
    """Invalid protocol or experiment configuration.

    ``field`` names the offending configuration key when there is one.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class UnreachableError(ValueError):
    """A requested error level cannot be reached by the chosen test."""

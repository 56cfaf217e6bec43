"""Error types shared across the package."""


class ConfigurationError(ValueError):
    """A config, file, or geometry description is invalid."""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition (e.g. order not a permutation)."""

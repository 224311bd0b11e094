"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation accepts."""


class ValidationError(ValueError):
    """An MDP table or document violates its structural constraints."""


class QueueConsistencyError(RuntimeError):
    """Action/delay windows no longer describe a reachable queue."""


class BudgetExceededError(RuntimeError):
    """An exact enumeration would exceed its configured budget."""

    def __init__(self, count, limit):
        super().__init__(f"enumeration needs {count} items, budget is {limit}")
        self.count = count
        self.limit = limit


class ConfigError(ValueError):
    """An experiment configuration is invalid."""

"""Shared exception types."""


class BudgetExceededError(RuntimeError):
    """An enumeration or state-space budget was exceeded.

    Raised instead of silently attempting an infeasible computation; the
    CLI maps this to its resource exit code.
    """


class ReversibilityError(ValueError):
    """A kernel failed a detailed-balance (reversibility) contract."""

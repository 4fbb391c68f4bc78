class InputError(ValueError):
    """Caller passed data that violates an operation's preconditions."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values."""


class SolverError(RuntimeError):
    """The direct linear solve could not produce a solution."""


class ContractError(RuntimeError):
    """An internal ordering or invariant contract was broken."""

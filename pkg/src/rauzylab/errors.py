"""Exception hierarchy.

The CLI maps these onto exit codes: input errors -> 2, caps -> 3,
precision problems -> 4.
"""


class RauzyLabError(Exception):
    exit_code = 1


class InputError(RauzyLabError, ValueError):
    exit_code = 2


class ReducibleError(InputError):
    """A reducible permutation was passed where S^0 is required."""


class TieError(InputError):
    """Rauzy induction is undefined: the two last intervals have equal length."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NotInHError(InputError):
    """A vector that should lie in H(pi) does not."""


class CapExceededError(RauzyLabError):
    exit_code = 3


class EscapeError(CapExceededError):
    """No return to the simplex within the iteration cap."""


class PrecisionError(RauzyLabError, ArithmeticError):
    exit_code = 4


class ConsistencyError(RauzyLabError, AssertionError):
    """An internal identity failed; this is a bug, not bad input."""

"""Exception and warning types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class SingularNodeError(ArithmeticError):
    """An integrand produced a non-finite value at a quadrature node."""


class BracketError(RuntimeError):
    """A root-finding bracket shows no sign change.

    The endpoint values are kept so callers can report them.
    """

    def __init__(self, message, lo=None, hi=None, f_lo=None, f_hi=None):
        super().__init__(message)
        self.lo = lo
        self.hi = hi
        self.f_lo = f_lo
        self.f_hi = f_hi


class ConvergenceWarning(RuntimeWarning):
    """A refinement loop hit its budget before reaching the tolerance."""


class AmbiguousCountWarning(RuntimeWarning):
    """An eigenvalue sits inside the guard band around the counting level."""


class ConsistencyError(ArithmeticError):
    """Two computed quantities contradict an identity they must satisfy."""

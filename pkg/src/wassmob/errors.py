"""Exception hierarchy shared by all wassmob modules."""


class WassmobError(Exception):
    """Base class for every error raised by this package."""


class NonPositiveMobility(WassmobError, ValueError):
    pass


class AnchorMissing(WassmobError, ValueError):
    pass


class NotSPD(WassmobError, ValueError):
    pass


class NotDiagonal(WassmobError, ValueError):
    pass


class UnsupportedMobility(WassmobError, ValueError):
    pass


class GridMismatch(WassmobError, ValueError):
    pass


class DimensionMismatch(WassmobError, ValueError):
    pass


class InfeasibleMarginals(WassmobError, ValueError):
    pass


class SizeExceeded(WassmobError, ValueError):
    pass


class NoConvergence(WassmobError, RuntimeError):
    """Raised only when a caller asks for strict convergence.

    Solvers normally return their best iterate and set a ``converged`` flag.
    """


class NotInvertible(WassmobError, ValueError):
    pass


class ContinuityViolated(WassmobError, ValueError):
    def __init__(self, residual, tol):
        super().__init__(f"discrete continuity residual {residual:.3e} exceeds {tol:.3e}")
        self.residual = residual
        self.tol = tol


class SingularOperator(WassmobError, ValueError):
    pass


class ConstraintViolated(WassmobError, ValueError):
    def __init__(self, index, residual):
        super().__init__(f"trial velocity {index} violates s + div(rho v) = 0 (residual {residual:.3e})")
        self.index = index
        self.residual = residual


class EmptyRow(WassmobError, ValueError):
    pass


class MissingDuals(WassmobError, ValueError):
    pass


class MissingMap(WassmobError, ValueError):
    pass


class UnsupportedAnisotropy(WassmobError, ValueError):
    pass


class SolverFailure(WassmobError, RuntimeError):
    pass


class ParseError(WassmobError, ValueError):
    def __init__(self, message, line=None, column=None):
        loc = "" if line is None else f" (line {line}, column {column or 1})"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ValidationError(WassmobError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        self.fields = [v.split(":", 1)[0] for v in self.violations]
        super().__init__("invalid configuration: " + "; ".join(self.violations))

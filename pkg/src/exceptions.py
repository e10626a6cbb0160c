# src/exceptions.py

class OccError(Exception):
    """Base exception for the occ toolkit."""
    pass

class ConfigurationError(OccError):
    """Raised when a run config or settings object is invalid (unknown key, bad value, missing input)."""
    pass

class InvalidArgumentError(OccError, ValueError):
    """Raised on invalid arguments (nonpositive lengths, NaN guesses, zero step sizes)."""
    pass

class DimensionError(InvalidArgumentError):
    """Raised when vector/matrix sizes do not match the model layout."""
    pass

class AdmissibilityError(OccError, ArithmeticError):
    """Raised when a field leaves the admissible region (e.g. λ = 0 or κ ≤ 0 in the shallow lake)."""
    pass

class FormatError(OccError):
    """Raised when a stored artifact has a wrong header, newer major version or is truncated."""
    pass

class SolverError(OccError):
    """Raised when a numerical solver fails."""
    pass

class NoConvergenceError(SolverError):
    """Raised when a Newton loop does not converge; carries the residual trace."""

    def __init__(self, message, residuals=None, partial=None):
        super().__init__(message)
        self.residuals = list(residuals or [])
        self.partial = partial

    @property
    def last_residual(self):
        return self.residuals[-1] if self.residuals else float("nan")

class SingularFactorError(SolverError):
    """Raised when a Floquet step factor is singular; carries the step index."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step

class DegenerateOrbitError(SolverError):
    """Raised when a periodic orbit collapses onto a steady state."""
    pass

class UnsupportedBifurcationError(SolverError):
    """Raised when branch switching is requested at an unsupported event."""
    pass

class NoSkibaError(SolverError):
    """Raised when no sign change of J_A − J_B is bracketed."""
    pass

class SaddlePointError(OccError):
    """Raised when a target violates the saddle-point property; carries the defect."""

    def __init__(self, message, defect):
        super().__init__(message)
        self.defect = defect

"""Exception hierarchy for hybrid simulation and information analysis."""


class SaltfimError(Exception):
    """Base class for all package errors."""


class ValidationError(SaltfimError, ValueError):
    """Invalid user input: shapes, parameter values, configuration."""


class NumericalError(SaltfimError, ArithmeticError):
    """A numerical routine failed (integration, Newton, factorization)."""


class IntegrationError(NumericalError):
    pass


class AlgebraicSolveError(NumericalError):
    """Newton iteration on an algebraic layer did not converge."""


class NoCrossingError(NumericalError):
    """Root bracketing was requested on an interval without a sign change."""


class AmbiguousEventError(NumericalError):
    """Two guard crossings fall within the event time tolerance."""


class GrazingError(NumericalError):
    """Guard crossing violates transversality (tangential contact)."""


class ZenoError(NumericalError):
    """Event cap exceeded on a finite horizon."""


class EstimationError(NumericalError):
    """Fit diverged or Monte-Carlo diagnostics failed."""

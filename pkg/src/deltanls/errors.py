"""Exception hierarchy shared by the library and the command line front end."""


class DeltaNLSError(Exception):
    """Base class for all library errors."""


class ParameterError(DeltaNLSError, ValueError):
    """Invalid physical or numerical parameters."""


class StructuralError(DeltaNLSError, ValueError):
    """Mismatched grids, shapes or unsupported sizes."""


class ConvergenceError(DeltaNLSError, RuntimeError):
    """An iterative solver failed to converge."""

    def __init__(self, message, residuals=None, **info):
        super().__init__(message)
        self.residuals = list(residuals) if residuals is not None else []
        self.info = info


class DomainError(DeltaNLSError, ValueError):
    """Input lies outside the small-data regime a routine is valid for."""


class QuadratureBudgetError(DeltaNLSError, RuntimeError):
    """A reference quadrature could not reach its tolerance within budget."""


class ThresholdOutsideRange(DeltaNLSError, RuntimeError):
    """No sign change of dM/dE was found in the scanned frequency range."""


class EvolutionAbort(DeltaNLSError, RuntimeError):
    """Time stepping stopped: blow-up proxy or conservation breach."""

    def __init__(self, message, time=None, **info):
        super().__init__(message)
        self.time = time
        self.info = info


class IllConditioned(DeltaNLSError, RuntimeError):
    """The modulation matrix left the near-symplectic regime."""

"""Exception hierarchy shared by all xdhom modules."""


class XdhomError(Exception):
    """Base class for all package-specific errors."""


class GeometryError(XdhomError):
    """Invalid periodicity-cell geometry (e.g. hole touching the cell boundary)."""


class ResolutionError(XdhomError):
    """Grid resolution too small for the requested geometry."""


class CoefficientError(XdhomError):
    """Coefficient field violates positivity or boundedness."""


class ParameterError(XdhomError):
    """Invalid model or algorithm parameter."""


class InputError(XdhomError):
    """Non-finite or malformed numerical input."""


class SolverError(XdhomError):
    """Linear solver did not reach the requested residual.

    Carries the achieved relative residual in ``residual``.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StepError(XdhomError):
    """A single implicit time step failed to converge."""


class RunError(XdhomError):
    """A transient run failed irrecoverably.

    ``partial_log`` holds the trajectory collected before the failure.
    """

    def __init__(self, message, partial_log=None):
        super().__init__(message)
        self.partial_log = partial_log


class ConfigError(XdhomError):
    """Invalid configuration document or command-line usage."""

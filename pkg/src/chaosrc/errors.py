"""Exception types shared across the library."""


class ChaosRcError(Exception):
    """Base class for every library-specific failure."""


class NonFiniteStateError(ChaosRcError):
    """A state vector left the finite range (blow-up or a bad step size).

    When raised from an integrator or an autonomous prediction loop, the
    `partial` attribute holds the trajectory of the finite samples produced
    before the failure and `steps_completed` counts them.
    """

    def __init__(self, message, partial=None, steps_completed=None):
        super().__init__(message)
        self.partial = partial
        self.steps_completed = steps_completed


class StepUnderflowError(ChaosRcError):
    """The adaptive controller drove the step size below the resolvable floor."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NoConvergenceError(ChaosRcError):
    """Both the iterative and the dense eigenvalue paths failed to converge."""


class ZeroRadiusInputError(ChaosRcError):
    """A matrix with spectral radius zero cannot be rescaled to a nonzero radius."""


class DimensionMismatchError(ChaosRcError):
    """Array shapes are inconsistent with each other."""


class DegenerateAbscissaError(ChaosRcError):
    """A line fit was requested through points whose x values are all equal."""


class ZeroVarianceError(ChaosRcError):
    """The reference trajectory is constant, so errors cannot be normalized."""


class InsufficientDataError(ChaosRcError):
    """A trajectory is too short for the requested operation."""


class InsufficientGrowthWindowError(ChaosRcError):
    """Too few error samples fall inside the exponential-growth window."""


class AlreadyExceededError(ChaosRcError):
    """The observed error is already at or above the validity threshold."""


class NonpositiveSlopeError(ChaosRcError):
    """Extrapolating a threshold crossing requires a positive growth slope."""


class ConfigError(ChaosRcError):
    """A configuration document or flag set failed validation."""

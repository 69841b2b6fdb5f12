"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`ImpactModelError`, itself a ``ValueError`` so callers that already
guard numerical input with ``except ValueError`` keep working.
"""


class ImpactModelError(ValueError):
    """Base class for all package errors."""


class LagMismatchError(ImpactModelError):
    """A tabulated kernel was evaluated away from its grid lags."""


class SingularityRiskError(ImpactModelError):
    """Parameters for which a closed form is not guaranteed to exist."""


class DegenerateKernelError(ImpactModelError):
    """Kernel parameters make the kernel matrix singular."""


class SingularSystemError(ImpactModelError):
    """A linear system that must be nonsingular is (numerically) singular."""


class ArityError(ImpactModelError):
    """Wrong number of agents or mismatched vector lengths."""


class DomainError(ImpactModelError):
    """Inputs outside the domain where the model is defined."""


class SingularFlowError(ImpactModelError):
    """The first flow entry vanishes, so the flow matrix cannot be inverted."""


class ScaleError(ImpactModelError):
    """A kernel cannot be scaled by its value at zero."""


class NoLinearSolutionError(ImpactModelError):
    """The schedule admits no linear implied kernel."""


class DegenerateScheduleError(ImpactModelError):
    """A schedule makes the linear-kernel ratios undefined."""


class ShiftDegeneracyError(ImpactModelError):
    """A kernel shift makes the Sherman-Morrison update singular."""


class NotPositiveDefiniteError(ImpactModelError):
    """A matrix required to be positive definite is not."""

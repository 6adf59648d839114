"""Exception and warning types shared across the solver."""


class EvostepError(Exception):
    """Base class for all solver errors."""


class BadWeight(EvostepError):
    """The exponential weight rho must be positive."""


class NonCoercive(EvostepError):
    """rho*m0 + m1 is not bounded away from zero on some cell/component."""


class BadPartition(EvostepError):
    """Region sub-intervals overlap, leave gaps, or are badly ordered."""


class DegreeTooSmall(EvostepError):
    """Polynomial degree below the minimum supported by the scheme."""


class UnresolvedRegion(EvostepError):
    """A region boundary falls strictly inside a mesh cell."""


class BoundaryMismatch(EvostepError):
    """First solution component does not vanish on the spatial boundary."""


class KinkNotResolved(EvostepError):
    """A source kink time lies strictly inside a time slab."""


class SingularSystem(EvostepError):
    """Direct slab solve failed or did not meet the residual tolerance."""


class NotAKnot(EvostepError):
    """Requested time is not a knot of the time partition."""


class OutOfDomain(EvostepError):
    """Point lies outside the space-time computational domain."""


class StabilityViolated(EvostepError):
    """A computed stability margin is negative beyond tolerance."""


class NotNested(EvostepError):
    """Reference and coarse discretizations are not nested."""


class BoundaryMismatchWarning(UserWarning):
    """Interpolated first component was clipped to zero at the boundary."""


class NotNestedWarning(UserWarning):
    """Reference grids are not nested; pointwise evaluation is still exact."""

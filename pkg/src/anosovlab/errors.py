"""Exception types raised by the geometry, flow, and lab layers."""


class AnosovLabError(Exception):
    """Base class for all package-specific errors."""


class OutOfDomain(AnosovLabError):
    """A chart point lies outside the chart's (collar-inflated) domain."""


class NotPositiveDefinite(AnosovLabError):
    """A metric evaluation violated positive definiteness beyond tolerance.

    This always signals a construction bug, never a user error.
    """


class NoOverlap(AnosovLabError):
    """A chart transition was requested at a point outside every overlap."""


class DomainEscape(AnosovLabError):
    """A trajectory left the atlas; impossible for complete atlases."""


class StepFailure(AnosovLabError):
    """The adaptive integrator could not meet its error tolerance."""


class DegenerateCone(AnosovLabError):
    """Cone edge vectors are parallel or antiparallel."""


class InfeasibleProfile(AnosovLabError):
    """No tube profile satisfies the requested radius/depth constraints."""


class NonPeriodic(AnosovLabError):
    """Mesh export requested for radii that do not close up periodically."""


class ConfigError(AnosovLabError):
    """Lab configuration failed validation."""


class ConstructionError(AnosovLabError):
    """Surface assembly failed (bad lattice, infeasible profile, ...)."""


class NumericalFailure(AnosovLabError):
    """An experiment failed for numerical reasons (step failure, overflow)."""

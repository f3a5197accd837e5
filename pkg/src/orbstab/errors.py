"""Exception hierarchy shared by all modules."""


class OrbstabError(Exception):
    """Base class for every error raised by the library."""


class DegenerateTangent(OrbstabError):
    pass


class MissingJacobian(OrbstabError):
    pass


class OrbitNotClosed(OrbstabError, ValueError):
    pass


class NotAnOrbit(OrbstabError):
    """The supplied curve is not a solution of the (driven) system."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ProjectionError(OrbstabError):
    pass


class ProjectionAmbiguous(ProjectionError):
    pass


class NewtonDiverged(ProjectionError):
    pass


class FocalPointReached(ProjectionError):
    pass


class RankDeficient(OrbstabError):
    pass


class FrameHolonomy(OrbstabError):
    pass


class IntegrationFailure(OrbstabError):
    pass


class NotConverged(OrbstabError):
    def __init__(self, message, gap=None, sweeps=None):
        super().__init__(message)
        self.gap = gap
        self.sweeps = sweeps


class BlowUp(OrbstabError):
    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class LeftTube(OrbstabError):
    """Raised when a closed-loop trajectory leaves the projection tube.

    ``trace`` holds the simulation truncated at the last good sample.
    """

    def __init__(self, message, time=None, trace=None):
        super().__init__(message)
        self.time = time
        self.trace = trace


class InsufficientData(OrbstabError):
    pass


class ConfigError(OrbstabError, ValueError):
    pass

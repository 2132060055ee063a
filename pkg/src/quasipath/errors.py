"""Exception hierarchy shared by all quasipath modules."""


class QuasipathError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameter(QuasipathError, ValueError):
    pass


class ConfigError(QuasipathError, ValueError):
    pass


class DegenerateCurve(QuasipathError, ValueError):
    """Two consecutive curve nodes coincide."""


class NonUniqueProjection(QuasipathError):
    """The nearest point on the curve is not unique (e.g. the centre of a circle)."""


class OutsideNeighborhood(QuasipathError):
    """The point lies beyond the estimated injectivity radius of the curve."""


class SingularDenominator(QuasipathError):
    """The projection derivative blows up (the point is near a focal point)."""


class NonHyperbolic(QuasipathError):
    """The Hessian restricted to the normal space has no positive gap."""


class NoConvergence(QuasipathError):
    pass


class ManifoldEscaped(QuasipathError):
    """A relaxing node left the validity neighbourhood of the stationary curve."""


class NoStableFixedPoint(QuasipathError):
    pass


class PathEscapedTube(QuasipathError):
    pass


class LowResolutionWarning(UserWarning):
    pass


class ValidityWarning(UserWarning):
    pass

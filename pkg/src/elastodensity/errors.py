"""Exception types raised across the package."""


class DomainError(ValueError):
    """Evaluation point outside the closed domain, or a field outside its valid range."""


class DegenerateMediumError(ValueError):
    """c_P == c_S somewhere, so the tensor coefficients divide by zero."""


class TrappedRayError(RuntimeError):
    """A geodesic exceeded the configured maximum length without leaving the domain."""


class CausticError(ValueError):
    """The spreading factor is non-positive where an amplitude is requested."""


class PreconditionError(ValueError):
    pass


class AlignmentError(ValueError):
    """A sampled vector field does not line up with the path it is paired with."""


class ConfigError(ValueError):
    pass

"""Exception types raised by the solver."""


class RelaxHdgError(Exception):
    """Base class for all package errors."""


class ParseError(RelaxHdgError):
    pass


class TopologyError(RelaxHdgError):
    pass


class MeshGenerationFailure(RelaxHdgError):
    pass


class SingularElement(RelaxHdgError):
    pass


class UnsupportedOrder(RelaxHdgError):
    pass


class MapMismatch(RelaxHdgError):
    pass


class NotNormalContinuous(RelaxHdgError):
    pass


class SingularSystem(RelaxHdgError):
    pass


class BackendFailure(RelaxHdgError):
    pass


class Blowup(RelaxHdgError):
    """Kinetic energy grew past the configured multiple of its initial value."""


class DimensionLimit(RelaxHdgError):
    pass


class MissingTag(RelaxHdgError):
    pass

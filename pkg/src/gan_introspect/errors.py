"""Exception hierarchy shared by every module."""


class GanIntrospectError(Exception):
    """Base class for all package errors."""


class InvalidData(GanIntrospectError, ValueError):
    pass


class DegenerateSubspace(GanIntrospectError, ValueError):
    pass


class ShapeMismatch(GanIntrospectError, ValueError):
    pass


class SingularCovariance(GanIntrospectError, ValueError):
    pass


class LayerSetMismatch(GanIntrospectError, KeyError):
    pass


class ShapeError(GanIntrospectError, ValueError):
    pass


class UnknownDomain(GanIntrospectError, ValueError):
    pass


class UnknownLayer(GanIntrospectError, KeyError):
    pass


class ContractViolation(GanIntrospectError, RuntimeError):
    pass


class ConfigError(GanIntrospectError, ValueError):
    pass


class FormatError(GanIntrospectError, ValueError):
    pass


class DivergenceError(GanIntrospectError, FloatingPointError):
    pass


class DegenerateStats(GanIntrospectError, ValueError):
    pass

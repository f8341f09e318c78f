"""Exception types raised by the solver stack."""


class LcicError(Exception):
    pass


class NonUnitTangent(LcicError, ValueError):
    pass


class DegenerateEllipse(LcicError, ValueError):
    pass


class RigidTube(LcicError, ValueError):
    pass


class DimensionMismatch(LcicError, ValueError):
    pass


class ConfigError(LcicError, ValueError):
    """Invalid scenario configuration.

    ``field`` names the offending key path (dotted), ``line`` the 1-based
    source line when known.
    """

    def __init__(self, message, field=None, line=None, path=None):
        self.field = field
        self.line = line
        self.path = path
        loc = ""
        if path is not None:
            loc = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            loc = f"line {line}: "
        if field:
            loc += f"[{field}] "
        super().__init__(loc + message)


class OutsideChannel(LcicError):
    pass


class FilletTooSmall(LcicError, ValueError):
    pass


class NonPsdConstraint(LcicError, ValueError):
    pass


class MaxIterExceeded(LcicError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ContinuationDiverged(LcicError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SqpStalled(LcicError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class Infeasible(LcicError):
    pass


class LengthMismatch(LcicError, ValueError):
    pass


class DegenerateGeometry(LcicError, ValueError):
    pass

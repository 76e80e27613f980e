"""Exception types raised by lipca."""


class LipcaError(Exception):
    """Base class for all library errors."""


class InvalidSpec(LipcaError, ValueError):
    pass


class InvalidTransitionMatrix(LipcaError, ValueError):
    pass


class EnumerationTooLarge(LipcaError):
    """K**N exceeds the configured enumeration cap."""


class NotRepresentable(LipcaError):
    """A global matrix does not come from any local transition matrix."""


class NotErgodic(LipcaError):
    pass


class NotPrimitive(LipcaError):
    pass


class NoConvergence(LipcaError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DegenerateSystem(LipcaError):
    """Normal matrix is (numerically) singular.

    ``result`` carries the flagged estimate when one was computed.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class InvalidRange(LipcaError, ValueError):
    pass


class ParseError(LipcaError, ValueError):
    def __init__(self, message, line=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class VersionMismatch(LipcaError):
    pass


class CountExceedsPool(LipcaError, ValueError):
    pass


class InvalidConfig(LipcaError, ValueError):
    pass

"""Exception types raised across the package."""


class ProtoOTError(Exception):
    """Base class for all package errors."""


class ZeroRowError(ProtoOTError, ValueError):
    """A row has (numerically) zero Euclidean norm and cannot be normalized."""


class DimMismatchError(ProtoOTError, ValueError):
    """Operand shapes are incompatible."""


class NonFiniteKernelError(ProtoOTError, FloatingPointError):
    """The Gibbs kernel overflowed; retry with ``log_domain=True``."""


class NoConvergenceError(ProtoOTError, RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance.

    The best plan found so far is attached as ``plan`` so callers that can
    live with a loose solution may still use it.
    """

    def __init__(self, message, plan=None):
        super().__init__(message)
        self.plan = plan


class TooLargeError(ProtoOTError, ValueError):
    """Problem size exceeds what the exhaustive oracle supports."""


class TooFewPointsError(ProtoOTError, ValueError):
    """Fewer samples than requested clusters."""


class EmptyInputError(ProtoOTError, ValueError):
    pass


class ShapeMismatchError(ProtoOTError, ValueError):
    """Two encoders do not share an architecture."""


class BankTooSmallError(ProtoOTError, ValueError):
    pass


class KMismatchError(ProtoOTError, ValueError):
    """Cluster count of one domain differs from the prototype count of the other."""


class NonPositiveTauError(ProtoOTError, ValueError):
    pass


class BatchTooSmallError(ProtoOTError, ValueError):
    pass


class RejectionExhaustedError(ProtoOTError, RuntimeError):
    """Could not place class means with the requested angular separation."""


class ParseError(ProtoOTError, ValueError):
    """Malformed feature or config file.

    ``line`` is 1-based when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class KTooLargeError(ProtoOTError, ValueError):
    """Requested cutoff k exceeds the gallery size."""


class IoError(ProtoOTError, OSError):
    """A file could not be read or written."""

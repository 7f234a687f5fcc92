"""Exception hierarchy shared by every module."""


class MonoscaleError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(MonoscaleError, ValueError):
    """Non-finite, empty or otherwise malformed numeric input."""


class InvalidConfigError(MonoscaleError, ValueError):
    """A configuration value is outside its documented range."""


class ParseError(MonoscaleError, ValueError):
    """A file row could not be parsed.

    Attributes:
        path: File being parsed (may be None for in-memory text).
        line: 1-based line number of the offending row.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class IntegrityError(MonoscaleError, ValueError):
    """Parsed data violates a stream invariant (ordering, normalization)."""


class IntegrityWarning(UserWarning):
    """Recoverable integrity issue, e.g. a slightly non-unit quaternion."""


class SingularSystemError(MonoscaleError, ArithmeticError):
    """The Yule-Walker system could not be solved."""


class NotReadyError(MonoscaleError, RuntimeError):
    """An estimator was asked for output before it was fitted."""


class NoValidPairsError(MonoscaleError, ValueError):
    """Every frame pair was degenerate; no scale can be formed."""


class AlignmentError(MonoscaleError, ValueError):
    """Two timestamped streams could not be matched within tolerance."""

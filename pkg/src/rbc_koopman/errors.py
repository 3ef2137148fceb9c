"""Exception hierarchy shared by every module of the toolkit."""


class RbcError(Exception):
    """Base class for all toolkit errors."""


class GridTooSmall(RbcError, ValueError):
    pass


class NoConvergence(RbcError, ArithmeticError):
    pass


class NotSymmetric(RbcError, ValueError):
    pass


class Blowup(RbcError, ArithmeticError):
    """Raised when a solver field leaves the sanity range; reduce dt and retry."""


class DegenerateGradient(RbcError, ValueError):
    pass


class ZeroReference(RbcError, ValueError):
    pass


class FormatError(RbcError, ValueError):
    """Bad magic, version, truncation or header/manifest disagreement in a file."""


class BadLength(RbcError, ValueError):
    pass


class BadSplit(RbcError, ValueError):
    pass


class LengthMismatch(RbcError, ValueError):
    pass


class RankZero(RbcError, ArithmeticError):
    pass


class ShapeMismatch(RbcError, ValueError):
    pass


class BadSequence(RbcError, ValueError):
    pass


class NonFiniteLoss(RbcError, ArithmeticError):
    pass


class MissingConfig(RbcError, KeyError):
    pass

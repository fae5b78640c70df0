"""Exception types raised by tilepile.

Every error named in the public operations has its own class so callers can
catch the precise failure. All of them derive from :class:`TilepileError`.
"""


class TilepileError(Exception):
    """Base class for all library errors."""


class SpecError(TilepileError, ValueError):
    """A tiling specification (or its file) is malformed."""


class ConditionAViolated(TilepileError):
    """An edge of the tiling crosses a face of the reflecting region."""


class NotReflectionSymmetric(TilepileError):
    """A family hyperplane reflection does not preserve the tiling."""


class NonConvergent(TilepileError):
    """An iterative computation failed to converge."""


class SingularSolve(TilepileError):
    """A linear solve was numerically singular."""


class PoleAtZero(TilepileError, ValueError):
    """The Green's function transform was requested at frequency zero."""


class MeanNotZero(TilepileError, ValueError):
    """An input that must sum to zero does not."""


class ClassMismatch(TilepileError, ValueError):
    """A prevector lies in a weaker function class than required."""


class PrecisionUnreachable(TilepileError):
    """The requested precision could not be reached within the size caps.

    The best available estimate is attached as ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NotAntisymmetric(TilepileError, ValueError):
    """A function expected to be reflection anti-symmetric is not (or is zero)."""


class OverlappingIntervals(TilepileError):
    """Error bars make the maximising index ambiguous."""


class GroupTooLarge(TilepileError):
    """The sandpile group exceeds the enumeration cap."""


class InequalityNotSatisfiable(TilepileError):
    """The hypotheses of the second-moment lower bound cannot be met."""

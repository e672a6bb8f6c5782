"""Exception hierarchy.

Every error raised on bad input derives from :class:`ForgeError`, which the
CLI maps to exit status 1.
"""


class ForgeError(ValueError):
    """Base class for validation errors."""


class MalformedFile(ForgeError):
    pass


class LabelOutOfRange(ForgeError):
    pass


class DuplicateClassifier(ForgeError):
    pass


class RowOrderMismatch(ForgeError):
    pass


class IndexOutOfRange(ForgeError, IndexError):
    pass


class EmptyEnsemble(ForgeError):
    pass


class MaskLengthMismatch(ForgeError):
    pass


class LengthMismatch(ForgeError):
    pass


class EmptySelection(ForgeError):
    pass


class FitnessEvaluationError(ForgeError):
    """Raised when the fitness callable fails mid-run.

    The trace collected up to the failing generation is attached as ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class DimensionMismatch(ForgeError):
    pass


class NonPositiveBandwidth(ForgeError):
    pass


class DegenerateDenominator(ForgeError):
    pass


class InsufficientCenters(ForgeError):
    pass


class ZeroProbability(ForgeError):
    pass


class MissingProxy(ForgeError):
    pass


class EmptyBatch(ForgeError):
    pass


class UnknownClass(ForgeError):
    pass


class NoPositives(ForgeError):
    pass


class NonFiniteValue(ForgeError):
    pass


class NonFiniteLoss(ForgeError):
    """Training diverged. The loss trace up to divergence is kept in ``trace``."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class InsufficientData(ForgeError):
    pass


class ManifestIncomplete(ForgeError):
    pass


class ClassifierSetMismatch(ForgeError):
    pass

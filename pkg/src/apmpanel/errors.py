"""Exception and warning types raised across the package."""


class ApmError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(ApmError, ValueError):
    """A row of the input file could not be parsed."""


class DuplicateCell(ApmError, ValueError):
    """The same (unit, outcome) pair appeared more than once."""


class EmptyInput(ApmError, ValueError):
    """The input contained no observations."""


class AllCohortsDropped(ApmError):
    """No cohort survived the minimum-size filter."""


class NotObserved(ApmError, ValueError):
    """The requested outcome is not observed for the requested cohort."""


class BadRank(ApmError, ValueError):
    """The requested factor rank is invalid for the panel."""


class EmptyCohort(ApmError, ValueError):
    """A cohort has no members."""


class ZeroCohortWeight(ApmError):
    """Every member of a cohort received zero weight."""


class RankExceedsObserved(ApmError, ValueError):
    """More factors were requested than a cohort has observed outcomes."""


class TooFewOutcomes(ApmError, ValueError):
    """A cohort observes too few outcomes for the split estimator."""


class DimensionMismatch(ApmError, ValueError):
    """Matrices with incompatible shapes were combined."""


class RankDeficientRestriction(ApmError):
    """The factor basis restricted to a cohort's outcomes has rank below r."""


class SingularGram(ApmError):
    """A Gram matrix that must be inverted is numerically singular."""


class UnidentifiedTarget(ApmError):
    """The requested cohort cannot be estimated from the available data."""


class MissingTreatedMean(ApmError, KeyError):
    """A target parameter needs a treated-outcome mean that was not supplied."""


class DegenerateDenominator(ApmError, ZeroDivisionError):
    """A ratio target has a denominator that is numerically zero."""


class TargetEvaluationError(ApmError):
    """A user supplied target function failed."""


class ReplicateFailure(ApmError):
    """Too many bootstrap replicates failed."""


class ZeroSpread(ApmError):
    """A bootstrap column has zero interquartile range."""


class OutsideNeighborhood(ApmError, ValueError):
    """A perturbation is too large for the eigenspace error bound to apply."""


class DegenerateCohort(ApmError):
    """A simulated cohort received no units."""


class DisconnectedDesign(ApmError):
    """The unit-outcome design of a fixed effects regression is disconnected."""


class UnidentifiedAfterMask(ApmError):
    """Masking a cell left the target without identifying information."""


class HeteroskedasticTruth(ApmError, ValueError):
    """The influence function oracle requires homoskedastic noise."""


class IdentificationWarning(UserWarning):
    """Identification is weak, partial or suspect."""


class DegenerateWarning(UserWarning):
    """A quantity collapsed to a degenerate value and was floored or dropped."""

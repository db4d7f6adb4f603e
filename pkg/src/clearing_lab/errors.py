"""Exception hierarchy.

Everything raised on purpose derives from :class:`ClearingError`, itself a
``ValueError`` so callers that only care about bad input can catch that.
"""


class ClearingError(ValueError):
    pass


class ValidationError(ClearingError):
    """A :class:`~clearing_lab.model.SystemParams` field violates the model."""


class NonPositiveDrift(ValidationError):
    pass


class NonPositiveDiffusion(ValidationError):
    pass


class NonPositiveWeight(ValidationError):
    pass


class NegativeCost(ValidationError):
    pass


class NonPositiveFixedCost(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class ParseError(ClearingError):
    pass


class NonPositiveParameter(ClearingError):
    pass


class ZeroCycle(NonPositiveParameter):
    """Both thresholds of a (T_Q + T) policy are zero."""


class DomainError(ClearingError):
    """Transform argument outside the region where the closed form is proven."""


class QExceedsQbar(ClearingError):
    pass


class DegenerateDiscriminant(ClearingError):
    pass


class InconsistentMoments(ClearingError):
    pass


class QuadratureFailure(ClearingError):
    pass


class Infeasible(ClearingError):
    pass


class CycleCapExceeded(ClearingError):
    pass

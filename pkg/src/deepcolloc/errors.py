"""Exception hierarchy shared by every module of the package."""


class DCMError(Exception):
    """Base class for all solver errors."""


class SingularMatrix(DCMError):
    pass


class NonPositiveJacobian(DCMError):
    """Raised when det(F) drops to (or below) the inversion threshold."""


class EmptyTape(DCMError):
    pass


class LengthMismatch(DCMError):
    pass


class InconsistentBCs(DCMError):
    pass


class EmptySet(DCMError):
    pass


class NonFiniteGradient(DCMError):
    pass


class NonFiniteLoss(DCMError):
    pass


class LineSearchFailure(DCMError):
    pass


class PreconditionViolation(DCMError):
    pass


class UnrecoverableInversion(DCMError):
    pass


class ZeroReference(DCMError):
    pass


class PathOutsideDomain(DCMError):
    pass


class ConfigParseError(DCMError):
    pass


class ConfigValidationError(DCMError):
    pass

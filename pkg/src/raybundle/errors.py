"""Exception hierarchy shared by every module."""


class RayBundleError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""

    exit_code = 1


class ValidationError(RayBundleError, ValueError):
    exit_code = 1


class NumericalError(RayBundleError, ArithmeticError):
    exit_code = 2


class ZeroDirection(ValidationError):
    pass


class InvalidCrop(ValidationError):
    pass


class InvalidCamera(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class CountMismatch(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class InvalidSchedule(ValidationError):
    pass


class InvalidTimestep(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class VersionMismatch(ParseError):
    pass


class SingularIntrinsics(NumericalError):
    pass


class SingularInput(NumericalError):
    pass


class DegenerateBundle(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class DegenerateConfiguration(NumericalError):
    pass


class ZeroTranslation(NumericalError):
    pass


class NoVisibleLandmarks(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    pass

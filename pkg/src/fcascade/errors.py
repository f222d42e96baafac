"""Exception hierarchy shared by all modules."""


class FcascadeError(Exception):
    """Base class for every error raised by this package."""


class SingularMatrix(FcascadeError):
    pass


class SpectraOverlap(FcascadeError):
    """The Sylvester operator is singular (spectra of A and S intersect)."""


class TooLarge(FcascadeError):
    pass


class DimensionMismatch(FcascadeError, ValueError):
    pass


class NonzeroS(FcascadeError):
    """An integral-action operation was requested on a model with S != 0."""


class NumericalFailure(FcascadeError):
    """Base for failures that the CLI maps to exit status 2."""


class StepRejected(NumericalFailure):
    def __init__(self, message, time=None):
        super().__init__(message if time is None else f"{message} (t={time:.6g})")
        self.time = time


class HorizonExceeded(NumericalFailure):
    pass


class NonPositiveTrace(FcascadeError, ValueError):
    pass


class InvalidParams(FcascadeError, ValueError):
    pass


class ConfigError(FcascadeError):
    pass

"""Exceptions raised by the integrator and its tooling."""


class CNSError(Exception):
    """Base class for every error this package raises on purpose."""


class ConfigurationError(CNSError, ValueError):
    pass


class ContextMismatchError(CNSError, ValueError):
    pass


class ParseError(CNSError, ValueError):
    pass


class MPOverflowError(CNSError, OverflowError):
    pass


class DegenerateSeriesError(CNSError, ArithmeticError):
    """Both trailing Taylor terms vanish; no stepsize can be derived from them."""


class HorizonTooShortError(CNSError, RuntimeError):
    pass


class FitError(CNSError, ValueError):
    pass


class CheckpointError(CNSError, RuntimeError):
    pass

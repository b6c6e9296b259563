"""Exception hierarchy shared by all hypermix modules."""


class HypermixError(Exception):
    """Base class for every error raised by hypermix."""


class ZeroParameter(HypermixError, ValueError):
    """A steering problem was posed with z = 0."""


class IllConditioned(HypermixError, ArithmeticError):
    """A floating point solve left a relative residual above tolerance."""


class CapExceeded(HypermixError, ValueError):
    """The flattened grid dimension exceeds the configured cap."""


class IndexOutOfRange(HypermixError, IndexError):
    pass


class NoLargeCoordinate(HypermixError):
    """No coordinate of a parameter vector reaches the large-coordinate threshold."""


class NonpositiveEpsilon(HypermixError, ValueError):
    pass


class IncompleteGrade(HypermixError, ValueError):
    """Truncation dimension does not sit on a grade boundary."""


class DependentFunctionals(HypermixError, ValueError):
    pass


class NotReachable(HypermixError):
    """The kernel span is too far from a ball center to build witnesses."""


class Inconclusive(HypermixError):
    """Sampled data sit entirely inside the decision margin band."""


class DegreeTooHigh(HypermixError, ValueError):
    pass


class ConstantSymbol(HypermixError, ValueError):
    """Dynamics on a multiplier need a non-constant symbol."""


class GridMismatch(HypermixError, ValueError):
    pass


class SupportEscape(HypermixError):
    """A shifted field would leave its box and wrap around."""


class ConfigError(HypermixError, ValueError):
    """Experiment configuration failed schema validation."""

    def __init__(self, message, path=()):
        super().__init__(message)
        self.path = (path,) if isinstance(path, str) else tuple(path)

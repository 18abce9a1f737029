"""Exception hierarchy.

Every error raised on purpose by the package derives from ``Catheter3DError``.
The CLI maps the three families below onto stable exit codes.
"""


class Catheter3DError(Exception):
    """Base class."""


class InvalidConfig(Catheter3DError, ValueError):
    """Malformed configuration, unknown keys or violated preconditions."""


class NumericalError(Catheter3DError, ArithmeticError):
    """A computation could not produce a trustworthy result."""


class NonPositiveDepth(NumericalError):
    pass


class DegenerateProjection(NumericalError):
    pass


class IllConditioned(NumericalError):
    pass


class SingularNormalEquations(NumericalError):
    pass


class DegenerateHistogram(NumericalError):
    pass


class DegenerateInput(NumericalError):
    pass


class NoDeflection(NumericalError):
    pass


class OutOfFrame(Catheter3DError, ValueError):
    pass


class ShapeMismatch(Catheter3DError, ValueError):
    pass


class CountMismatch(ShapeMismatch):
    pass


class TooFewFrames(InvalidConfig):
    pass


class FormatError(Catheter3DError, IOError):
    """A file exists but does not follow the expected format."""

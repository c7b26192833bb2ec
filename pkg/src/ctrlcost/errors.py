"""Exception types raised by the package.

Input problems raise :class:`ValidationError` (a ``ValueError``); the CLI maps
it to exit code 2.  Everything deriving from :class:`NumericalError` means the
computation itself could not certify its result and maps to exit code 1.
"""


class ValidationError(ValueError):
    """Rejected input; ``field`` names the offending parameter."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class NumericalError(RuntimeError):
    """Base class for failures of a numerical certificate."""


class ConvergenceError(NumericalError):
    pass


class DegenerateGramianError(NumericalError):
    pass


class TruncationError(NumericalError):
    pass


class ResolutionError(NumericalError):
    pass


class DegeneracyError(NumericalError):
    pass


class ConstructionError(NumericalError):
    pass

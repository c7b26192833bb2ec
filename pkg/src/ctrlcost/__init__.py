"""Controllability costs of one-dimensional Schrödinger systems.

Observability Gramians in multiprecision, minimal-norm (HUM) controls,
biorthogonal families for short time windows, heat-kernel lower bounds,
control transmutation from the wave equation and tensor-product costs.
"""
from .errors import (ConstructionError, ConvergenceError, DegeneracyError, DegenerateGramianError,
                     NumericalError, ResolutionError, TruncationError, ValidationError)
from .precision import DEFAULT, PrecisionContext

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "DEFAULT",
    "PrecisionContext",
    "ValidationError",
    "NumericalError",
    "ConvergenceError",
    "DegenerateGramianError",
    "TruncationError",
    "ResolutionError",
    "DegeneracyError",
    "ConstructionError",
]

"""Spectral adjustment for unmeasured spatial confounding."""

from ._errors import NumericalError

__version__ = "0.1.0"

__all__ = ["NumericalError", "__version__"]

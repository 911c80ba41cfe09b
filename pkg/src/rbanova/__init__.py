"""Reduced-basis anchored ANOVA surrogates for MCMC on a parametric diffusion problem."""

from .errors import (
    ConfigurationError,
    DegenerateError,
    DomainError,
    ModelFormatError,
    NumericalError,
    RbAnovaError,
    StructuralError,
)

__version__ = "0.1.0"

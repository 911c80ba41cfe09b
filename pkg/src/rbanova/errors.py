"""Exception hierarchy shared across the package."""


class RbAnovaError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RbAnovaError, ValueError):
    """Inputs are inconsistent (dimensions, tolerances, sensor placement, ...)."""


class DomainError(RbAnovaError, ArithmeticError):
    """A parameter value leaves the admissible set, e.g. nonpositive permeability."""

    def __init__(self, message, xi=None):
        super().__init__(message)
        self.xi = xi


class NumericalError(RbAnovaError, ArithmeticError):
    """A reduced system could not be solved."""


class DegenerateError(RbAnovaError, ValueError):
    """An input has no usable content (all-zero snapshots, vanishing norms)."""


class StructuralError(RbAnovaError, KeyError):
    """A required ANOVA child term is missing."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ModelFormatError(RbAnovaError, IOError):
    """A serialized surrogate is malformed, truncated or fails its checksum."""

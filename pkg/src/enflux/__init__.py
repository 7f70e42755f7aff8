"""Spectral diagnostics for energy conservation of weak incompressible Euler solutions."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    EnfluxError,
    HypothesisWarning,
    NumericalHypothesisError,
    StorageError,
    ValidationError,
)
from .spectral import Domain, DomainKind, Grid, SpectralField, VelocityField  # noqa: E402

__all__ = [
    "__version__",
    "Domain",
    "DomainKind",
    "EnfluxError",
    "Grid",
    "HypothesisWarning",
    "NumericalHypothesisError",
    "SpectralField",
    "StorageError",
    "ValidationError",
    "VelocityField",
]

"""Exception hierarchy shared by the library and the CLI.

Each error class carries the process exit code the CLI maps it to.
"""

from __future__ import annotations


class EnfluxError(Exception):
    exit_code = 2


class ValidationError(EnfluxError):
    """Bad input: shapes, parameters, grids that do not match."""


class DomainError(ValidationError):
    """Operation not defined on the given domain kind."""


class DataError(ValidationError):
    """Non-finite or malformed sample data."""


class RangeError(ValidationError):
    """Parameter outside its admissible interval."""


class GenerationError(ValidationError):
    """A generator could not meet its own output constraints."""


class SchemaError(ValidationError):
    """Report or config schema/version mismatch."""


class NumericalHypothesisError(EnfluxError):
    """A hypothesis of the underlying estimate failed (trace, CFL, resolution)."""

    exit_code = 3


class CFLError(NumericalHypothesisError):
    pass


class ResolutionLossError(NumericalHypothesisError):
    pass


class StorageError(EnfluxError):
    """File I/O and on-disk format problems."""

    exit_code = 4


class StageError(EnfluxError):
    """A pipeline stage failed; wraps the underlying error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2)


class HypothesisWarning(UserWarning):
    """Computation proceeded although an input hypothesis is not met."""

"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class ParapdeError(Exception):
    """Base class for library errors."""


class RangeError(ParapdeError, ValueError):
    """An argument lies outside its admissible range."""


class ShapeError(ParapdeError, ValueError):
    """Operands live on incompatible grids or have incompatible shapes."""


class ContractError(ParapdeError, ValueError):
    """A documented precondition or exponent relation is violated."""


class ConfigError(ParapdeError, ValueError):
    """Invalid run configuration."""


class NumericalError(ParapdeError, RuntimeError):
    """A numerical stage failed.

    Parameters
    ----------
    message : str
        Human readable description.
    stage : str
        Short machine readable label, e.g. ``"iteration-failure"``.
    data : dict, optional
        Diagnostic payload (residual traces and the like).
    """

    def __init__(self, message: str, stage: str = "numerical", data: dict | None = None):
        super().__init__(message)
        self.stage = stage
        self.data = dict(data or {})


class IterationFailure(NumericalError):
    """Fixed-point iteration did not reach its tolerance."""

    def __init__(self, message: str, data: dict | None = None):
        super().__init__(message, stage="iteration-failure", data=data)


class BlowUpError(NumericalError):
    """A time stepper produced values above its cap or non-finite values."""

    def __init__(self, message: str, time: float | None = None, data: dict | None = None):
        payload = dict(data or {})
        payload["time"] = time
        super().__init__(message, stage="blow-up", data=payload)
        self.time = time

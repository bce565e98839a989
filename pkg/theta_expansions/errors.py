from __future__ import annotations

from typing import Any


class ThetaExpansionError(Exception):
    code = "error"

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.details = details

    def to_record(self) -> dict[str, Any]:
        return {"error": self.code, "message": str(self), **self.details}


class ParameterError(ThetaExpansionError, ValueError):
    code = "parameter"


class DomainError(ThetaExpansionError, ValueError):
    code = "domain"


class CertificationError(ThetaExpansionError):
    """The floor of an enclosure stayed ambiguous up to the precision cap."""

    code = "certification"

    def __init__(self, message: str, *, ambiguous: list[int], precision: int) -> None:
        super().__init__(message, ambiguous=ambiguous, precision=precision)
        self.ambiguous = ambiguous
        self.precision = precision


class OrbitTooShortError(ThetaExpansionError):
    code = "orbit_too_short"

    def __init__(self, message: str, *, length: int) -> None:
        super().__init__(message, length=length)
        self.length = length


class DigitOverflowError(ThetaExpansionError, OverflowError):
    code = "digit_overflow"


class NumericalError(ThetaExpansionError, ArithmeticError):
    code = "numerical"


class UnsupportedMethodError(ThetaExpansionError, NotImplementedError):
    code = "unsupported"


class FitError(ThetaExpansionError):
    code = "fit"


class ConfigError(ThetaExpansionError, ValueError):
    code = "config"

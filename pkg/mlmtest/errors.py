"""
Exceptions raised by the mixed-model fitting and testing code.

Every error carries an ``exit_code`` so the command line front end can map it
to its stable contract: 2 for bad input, 3 for numerical failure.
"""
from __future__ import annotations

from typing import Any, Optional, Sequence


class MixedModelError(Exception):
    exit_code = 3

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context = context

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{key}={value!r}" for key, value in self.context.items())
        return f"{self.message} ({details})"


class InputError(MixedModelError):
    exit_code = 2


class NotPositiveDefinite(MixedModelError):
    pass


class InfeasibleOmega(MixedModelError):
    def __init__(self, message: str, omega: Optional[Sequence[float]] = None):
        super().__init__(message, omega=None if omega is None else [float(v) for v in omega])
        self.omega = omega


class RankDeficientDesign(InputError):
    def __init__(self, message: str, columns: Optional[Sequence[str]] = None, condition: Optional[float] = None):
        super().__init__(message, columns=list(columns or []), condition=condition)
        self.columns = list(columns or [])
        self.condition = condition


class NonConvergence(MixedModelError):
    def __init__(self, message: str, best: Any = None):
        super().__init__(message)
        self.best = best


class SingularObservedInformation(MixedModelError):
    pass


class SingularInformation(MixedModelError):
    pass


class InstanceTooLarge(MixedModelError):
    def __init__(self, message: str, size: int, limit: int):
        super().__init__(message, size=size, limit=limit)
        self.size = size
        self.limit = limit


class ParseError(InputError):
    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message, row=row, column=column)
        self.row = row
        self.column = column


class MissingColumn(InputError):
    def __init__(self, message: str, column: str):
        super().__init__(message, column=column)
        self.column = column


class EmptyUnit(InputError):
    def __init__(self, message: str, unit: Any = None):
        super().__init__(message, unit=unit)
        self.unit = unit


class ConfigError(InputError):
    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message, key=key)
        self.key = key

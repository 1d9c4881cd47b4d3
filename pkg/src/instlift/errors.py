"""Exception types shared across the pipeline.

Each error carries an ``exit_code`` used by the command line front end.
"""

from __future__ import annotations


class InstLiftError(Exception):
    exit_code = 4


class ConfigError(InstLiftError):
    exit_code = 2

    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class DataError(InstLiftError):
    exit_code = 3


class GeometryError(InstLiftError, ValueError):
    pass


class BehindCamera(GeometryError):
    pass


class NonPositiveDepth(GeometryError):
    pass


class OutOfBounds(GeometryError):
    pass


class SceneError(InstLiftError, ValueError):
    exit_code = 3


class DuplicateId(SceneError):
    pass


class DegeneratePrimitive(SceneError):
    pass


class BadParams(SceneError):
    pass


class NoForeground(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IndexOutOfRange(DataError):
    pass


class InconsistentInput(DataError):
    pass


class UnmappedId(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class UnknownLabel(DataError, KeyError):
    pass


class ShapeMismatch(DataError):
    pass


class FormatError(DataError):
    pass


class IoError(DataError):
    pass


class InvariantViolation(InstLiftError):
    exit_code = 4

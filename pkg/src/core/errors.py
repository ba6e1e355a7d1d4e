"""
Exception types raised by the retrieval engine.

Every error derives from EngineError and from the closest builtin so callers
catching ValueError / KeyError keep working. Errors raised while reading a
file carry a record locator ("path:line").
"""

from typing import Optional


class EngineError(Exception):
    """Base class for every engine failure."""

    def __init__(self, message: str, locator: Optional[str] = None):
        self.locator = locator
        if locator:
            message = f"{locator}: {message}"
        super().__init__(message)


class ZeroVectorError(EngineError, ValueError):
    """A vector with no nonzero component has no direction to normalize."""


class DimensionMismatchError(EngineError, ValueError):
    pass


class DanglingParentError(EngineError, KeyError):
    """A child references a parent that was never declared."""

    def __init__(self, parent_id: str, locator: Optional[str] = None):
        self.parent_id = parent_id
        super().__init__(f"DanglingParent({parent_id!r})", locator)

    def __str__(self) -> str:
        # KeyError would otherwise repr() the message
        return self.args[0]


class DuplicateChildError(EngineError, ValueError):
    pass


class DuplicateParentError(EngineError, ValueError):
    pass


class EmptyParentError(EngineError, ValueError):
    """A parent owns no children."""


class EmptyQueryError(EngineError, ValueError):
    pass


class NegativeGradeError(EngineError, ValueError):
    pass


class RecordFormatError(EngineError, ValueError):
    """A record could not be parsed or misses a required field."""


class UnknownParentError(EngineError, KeyError):
    def __init__(self, parent_id: str):
        self.parent_id = parent_id
        super().__init__(f"UnknownParent({parent_id!r})")

    def __str__(self) -> str:
        return self.args[0]


class UnnormalizedQueryError(EngineError, ValueError):
    pass


class InvalidKError(EngineError, ValueError):
    pass


class EmptyChildrenError(EngineError, ValueError):
    pass


class EmptyScoresError(EngineError, ValueError):
    pass


class MissingWeightError(EngineError, KeyError):
    def __str__(self) -> str:
        return self.args[0]


class IndexFormatError(EngineError, ValueError):
    """An index file has the wrong magic, version or layout."""


class ConfigError(EngineError, ValueError):
    pass


class OracleTooLargeError(EngineError, ValueError):
    """The corpus exceeds the configured oracle ceiling."""

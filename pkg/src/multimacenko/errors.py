"""Exception hierarchy.

Every error raised for bad pixel data or a degenerate estimate derives from
:class:`StainError`. Errors raised while fitting a reference set carry the
index of the offending image in ``index``.
"""

from __future__ import annotations


class StainError(Exception):
    def __init__(self, message: str = "", index: int | None = None):
        super().__init__(message)
        self.index = index

    def with_index(self, index: int) -> "StainError":
        err = type(self)(f"image {index}: {self}", index=index)
        return err


class EmptyImage(StainError):
    pass


class DimensionMismatch(StainError):
    pass


class SingularStainMatrix(StainError):
    pass


class DegenerateCloud(StainError):
    pass


class DegenerateStains(StainError):
    pass


class DegenerateBasis(StainError):
    pass


class InsufficientTissue(StainError):
    pass


class EmptyAngles(StainError):
    pass


class InvalidSpec(StainError):
    pass


class UnsupportedFormat(StainError):
    pass


class DecodeError(StainError):
    pass


class SchemaVersionMismatch(StainError):
    pass

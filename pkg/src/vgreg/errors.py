"""Exception types raised across the package."""

from __future__ import annotations


class RegistrationError(Exception):
    """Base class for all package errors."""


class InvalidArgument(RegistrationError, ValueError):
    pass


class DegenerateInput(RegistrationError, ValueError):
    """Too few, zero-weight, or collinear correspondences for a rigid fit."""


class InsufficientCorrespondences(RegistrationError):
    pass


class NoConsensus(RegistrationError):
    """RANSAC could not find a hypothesis supported by a minimal sample's worth of inliers."""


class EmptyInlierSet(RegistrationError):
    pass


class EmptyInput(RegistrationError, ValueError):
    pass


class ParseError(RegistrationError):
    """Malformed input file. ``line`` / ``offset`` locate the problem when known."""

    def __init__(self, message: str, *, path=None, line: int | None = None, offset: int | None = None):
        self.path = path
        self.line = line
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class UnsupportedFormat(RegistrationError):
    pass


class EmptyNeighborhood(UserWarning):
    """Some points had no neighbours within the descriptor radius; their descriptors are all zero."""

# errors.py - exception hierarchy shared by the library and the CLI
"""Exceptions raised by navattack.

The CLI maps InputError, GraphFormatError and their subclasses to exit code 2
and everything else to exit code 1.
"""
from typing import Any, Optional


class NavAttackError(Exception):
    """Base class for every error raised by this package."""


class InputError(NavAttackError, ValueError):
    """Rejected input: wrong dimensions, unknown ids, empty landmark lists."""


class ConfigError(InputError):
    """A configuration value is outside its declared range."""


class UndefinedSimilarityError(InputError):
    """Cosine similarity requested for a zero vector."""


class InfeasibleAssignmentError(InputError):
    """The start-to-target path is too short to host every landmark."""


class NoPathError(NavAttackError):
    """The target cannot be reached from the start node."""


class OptimizationFailure(NavAttackError):
    """Embedding alignment produced a non-finite loss or an unusable image."""

    def __init__(self, message: str, trace: Optional[Any] = None):
        super().__init__(message)
        self.trace = trace


class GraphFormatError(NavAttackError):
    """A graph directory could not be read or failed validation."""


class ManifestError(GraphFormatError):
    """manifest.json is missing, malformed, or has an unsupported version."""


class MissingBlobError(GraphFormatError):
    """An image blob referenced by the manifest does not exist."""


class BlobFormatError(GraphFormatError):
    """An image blob has a bad magic header or is truncated."""


class GraphDimensionError(GraphFormatError):
    """Images in one graph do not share the same dimensions."""


class GraphValidationError(GraphFormatError, InputError):
    """Structural problem: duplicate ids, dangling edges, bad costs, disconnected graph."""

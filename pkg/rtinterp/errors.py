"""Exception hierarchy shared by every *rtinterp* module.

The CLI maps these onto process exit codes (see :data:`EXIT_CODES`).  Library
callers can catch :class:`RtInterpError` to handle any domain failure in one
place while programming errors (``TypeError`` & co.) still propagate.
"""

from __future__ import annotations

from typing import Final

__all__ = [
    "RtInterpError",
    "ConfigurationError",
    "PreconditionError",
    "DegenerateGeometryError",
    "InconsistentRouteError",
    "NoNeighborsError",
    "GridFormatError",
    "SchemaVersionError",
    "ContractViolation",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_IO",
    "EXIT_EMPTY",
]

EXIT_OK: Final[int] = 0
EXIT_CONFIG: Final[int] = 2
EXIT_IO: Final[int] = 3
EXIT_EMPTY: Final[int] = 4


class RtInterpError(Exception):
    """Base-class for all domain errors raised by the package."""


class ConfigurationError(RtInterpError):
    """Invalid run configuration, scene description or scenario."""


class PreconditionError(RtInterpError, ValueError):
    """An operation was called with arguments violating its contract."""


class DegenerateGeometryError(RtInterpError):
    """Geometry with no well-defined direction (zero-length segment, straight-through bounce)."""


class InconsistentRouteError(RtInterpError):
    """A reflection route whose recovered image distance disagrees with its length."""


class NoNeighborsError(RtInterpError):
    """No reference point lies within ``d_th`` of the target."""

    def __init__(self, target, d_th: float) -> None:
        self.target = tuple(float(c) for c in target)
        self.d_th = float(d_th)
        super().__init__(
            f"no reference point within d_th={self.d_th:g} m of target {self.target}; "
            "enlarge d_th or densify the reference grid"
        )


class GridFormatError(RtInterpError):
    """Malformed path-data CSV.  ``line`` is the 1-based physical line number."""

    def __init__(self, message: str, *, line: int | None = None, source: str | None = None) -> None:
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class SchemaVersionError(GridFormatError):
    """File declares a schema version this build does not understand."""


class ContractViolation(RtInterpError):
    """Caller broke an API contract, e.g. RM synthesis of a path without a transform."""

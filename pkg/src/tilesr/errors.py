"""Exception hierarchy.

Every error carries a ``category`` used by the service layer and a matching
CLI exit code: 1 usage, 2 config, 3 extraction, 4 backend, 5 internal.
"""

from __future__ import annotations


class TilesrError(Exception):
    category = "internal"
    exit_code = 5


class UsageError(TilesrError):
    category = "usage"
    exit_code = 1


class ConfigError(TilesrError):
    category = "config"
    exit_code = 2


class ParameterError(ConfigError):
    """A numeric or enum parameter is out of its documented range."""


class PlanError(ConfigError):
    """A tiling plan cannot be built from the requested geometry."""


class MediaError(ConfigError):
    """An input cannot be decoded or an output cannot be encoded."""


class ExtractionError(TilesrError):
    category = "extraction"
    exit_code = 3


class ManifestError(ExtractionError):
    """A prompt manifest is unreadable, incomplete, or stale."""


class BackendError(TilesrError):
    category = "backend"
    exit_code = 4


class TransportError(BackendError):
    """The backend could not be reached (after exhausting retries)."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class ProtocolError(BackendError):
    """The backend answered, but not in the agreed wire format."""


class ContractViolationError(BackendError):
    """The backend returned tensors that break its declared shape contract."""


class ScheduleError(BackendError):
    """A timestep has no entry in the noise schedule."""


class ShapeError(TilesrError):
    """Tensor extents do not match the operation's contract."""


class BoundsError(TilesrError):
    """A coordinate or region lies outside the addressed volume."""


class CoverageError(TilesrError):
    """An output cell is covered by no tile (zero aggregate weight)."""

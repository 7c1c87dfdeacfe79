"""Exception types shared by the epicount modules.

Every error carries a machine-readable diagnostic so the command-line tool
can report it as a JSON line.
"""

from __future__ import annotations

from typing import Any


class EpicountError(ValueError):
    """Base class for validation and model errors."""

    kind = "error"

    def __init__(
        self,
        code: str,
        message: str,
        *,
        area: str | None = None,
        time: int | None = None,
        path: str | None = None,
    ) -> None:
        super().__init__(message)
        self.code = code
        self.message = message
        self.area = area
        self.time = time
        self.path = path

    def diagnostic(self) -> dict[str, Any]:
        """Return the error as a flat dict, omitting unset location fields."""
        diag: dict[str, Any] = {
            "level": "error",
            "kind": self.kind,
            "code": self.code,
            "message": self.message,
        }
        if self.area is not None:
            diag["area"] = self.area
        if self.time is not None:
            diag["time"] = self.time
        if self.path is not None:
            diag["path"] = self.path
        return diag


class PanelError(EpicountError):
    kind = "panel"


class SpatialError(EpicountError):
    kind = "spatial"


class WeightError(EpicountError):
    kind = "weights"


class DistributionError(EpicountError):
    kind = "distribution"


class ModelSpecError(EpicountError):
    kind = "model_spec"


class ParameterError(EpicountError):
    kind = "parameters"


class ReportingError(EpicountError):
    kind = "reporting"


class SamplerError(EpicountError):
    kind = "sampler"


class UsageError(EpicountError):
    kind = "usage"

"""Classifier-free guidance combination and misguidance diagnostics.

The guided prediction is e_uncond + s * (e_cond - e_uncond). The diagnostic
side measures how far the guidance direction under one condition strays from
the direction under a tile's own local condition; guidance multiplies that
deviation by s, which is exactly why an ill-fitting condition hurts more at
high guidance scales.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .volume import LatentVolume


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float = 1.0
    enabled: bool = True

    def __post_init__(self):
        if not math.isfinite(self.scale) or self.scale < 0:
            raise ParameterError(f"guidance scale must be finite and >= 0, got {self.scale}")


@dataclass(frozen=True)
class MisguidanceReport:
    """Per-tile, per-timestep deviation of the used guidance direction.

    ``delta_norm`` is the L2 distance between the guidance direction under
    the condition actually used and the direction under the tile's local
    condition (the operational stand-in for the unobservable ideal).
    ``guidance_norm`` is the L2 norm of the used direction itself.
    """

    tile_index: int
    timestep: float
    delta_norm: float
    guidance_norm: float
    reference_condition: str


MISGUIDANCE_CSV_HEADER = "tile_index,timestep,delta_norm,guidance_norm,reference_condition"


def _require_same_extent(a: LatentVolume, b: LatentVolume, what: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"{what}: extent mismatch {a.data.shape} vs {b.data.shape}"
        )


def cfg_combine(e_uncond: LatentVolume, e_cond: LatentVolume, scale: float) -> LatentVolume:
    """e_uncond + scale * (e_cond - e_uncond), elementwise.

    scale == 1 returns the conditional prediction bit-exact and scale == 0
    the unconditional one; anything else is computed in float32.
    """
    _require_same_extent(e_uncond, e_cond, "cfg_combine")
    if scale == 1.0:
        return e_cond.copy()
    if scale == 0.0:
        return e_uncond.copy()
    s = np.float32(scale)
    return LatentVolume(e_uncond.data + s * (e_cond.data - e_uncond.data))


def guidance_direction(e_uncond: LatentVolume, e_cond: LatentVolume) -> LatentVolume:
    """The direction guidance pushes along: e_cond - e_uncond."""
    _require_same_extent(e_uncond, e_cond, "guidance_direction")
    return LatentVolume(e_cond.data - e_uncond.data)


def misguidance_norm(
    delta_with_c: LatentVolume, delta_ideal: LatentVolume, per_cell: bool = False
) -> float:
    """L2 norm of (delta_with_c - delta_ideal) over all cells.

    ``per_cell=True`` returns the RMS variant (norm / sqrt(cell count)) for
    comparisons across tiles of different sizes.
    """
    _require_same_extent(delta_with_c, delta_ideal, "misguidance_norm")
    diff = delta_with_c.data.astype(np.float64) - delta_ideal.data.astype(np.float64)
    norm = float(np.sqrt(np.sum(diff * diff)))
    if per_cell:
        norm /= math.sqrt(diff.size)
    return norm


def field_norm(volume: LatentVolume, per_cell: bool = False) -> float:
    """L2 norm of a prediction field (float64 accumulation)."""
    data = volume.data.astype(np.float64)
    norm = float(np.sqrt(np.sum(data * data)))
    if per_cell:
        norm /= math.sqrt(data.size)
    return norm


def reports_to_csv(reports: list[MisguidanceReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MISGUIDANCE_CSV_HEADER.split(","))
    for report in reports:
        writer.writerow(
            [
                report.tile_index,
                f"{report.timestep:.6g}",
                f"{report.delta_norm:.9g}",
                f"{report.guidance_norm:.9g}",
                report.reference_condition,
            ]
        )
    return buf.getvalue()

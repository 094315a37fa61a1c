"""Tiling geometry: tile regions, grid plans, and coordinate maps.

A plan splits a (frames, rows, cols) extent into a Cartesian grid of
axis-aligned regions. Per axis the candidate origins are 0, s, 2s, ... with
stride s = tile - overlap; the final origin is clamped flush against the
boundary (extent - tile), so the last pair of tiles may overlap by more than
the nominal overlap. Planning is space-agnostic: callers decide whether the
extents describe pixels or a model's latent grid.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .errors import BoundsError, ParameterError, PlanError

GAUSSIAN_BLEND = "gaussian_blend"
VALID_REGION = "valid_region"
PLAN_MODES = (GAUSSIAN_BLEND, VALID_REGION)

_AXES = ("t", "h", "w")

Coord3 = tuple[int, int, int]


@dataclass(frozen=True)
class Extent3:
    """Spatio-temporal size (frames, rows, cols). Channels live on the volume."""

    t: int
    h: int
    w: int

    def __post_init__(self):
        for name, value in zip(_AXES, (self.t, self.h, self.w)):
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ParameterError(
                    f"extent axis {name} must be a positive integer, got {value!r}"
                )

    def as_tuple(self) -> Coord3:
        return (self.t, self.h, self.w)

    def cells(self) -> int:
        return self.t * self.h * self.w


@dataclass(frozen=True)
class TileRegion:
    """One axis-aligned sub-volume of a plan, with its local coordinate map."""

    index: int
    origin: Coord3
    size: Extent3

    def __post_init__(self):
        if self.index < 1:
            raise ParameterError(f"region index must be >= 1, got {self.index}")
        for name, value in zip(_AXES, self.origin):
            if value < 0:
                raise ParameterError(f"region origin {name} must be >= 0, got {value}")

    @property
    def end(self) -> Coord3:
        return tuple(o + s for o, s in zip(self.origin, self.size.as_tuple()))

    def contains(self, coord: Coord3) -> bool:
        return all(o <= c < e for o, c, e in zip(self.origin, coord, self.end))

    def to_local(self, coord: Coord3) -> Coord3:
        """Map a global coordinate into tile-local coordinates."""
        if not self.contains(coord):
            raise BoundsError(
                f"coordinate {coord} lies outside region {self.index} "
                f"[{self.origin}..{self.end})"
            )
        return tuple(c - o for c, o in zip(coord, self.origin))

    def to_global(self, local: Coord3) -> Coord3:
        """Inverse of :meth:`to_local`; identity when composed with it."""
        for name, value, limit in zip(_AXES, local, self.size.as_tuple()):
            if not 0 <= value < limit:
                raise BoundsError(
                    f"local coordinate {local} exceeds region size on axis {name}"
                )
        return tuple(c + o for c, o in zip(local, self.origin))

    def scaled(self, r: int) -> "TileRegion":
        """Scale spatial axes by r (time stays 1:1)."""
        t0, h0, w0 = self.origin
        return TileRegion(
            index=self.index,
            origin=(t0, h0 * r, w0 * r),
            size=Extent3(self.size.t, self.size.h * r, self.size.w * r),
        )


@dataclass(frozen=True)
class TilePlan:
    """An ordered grid of regions covering ``input_extent``.

    Regions are ordered lexicographically by origin and indexed densely from
    1. ``valid_margin`` is only meaningful in valid-region mode; ``None``
    lets the blend-window builder split each overlap band at its midpoint.
    """

    input_extent: Extent3
    tile_size: Extent3
    overlap: Coord3
    mode: str
    regions: tuple[TileRegion, ...]
    valid_margin: Coord3 | None = None

    def __len__(self) -> int:
        return len(self.regions)

    def scaled(self, r: int) -> "TilePlan":
        if r == 1:
            return self
        if r < 1:
            raise ParameterError(f"scale must be a positive integer, got {r}")
        margin = self.valid_margin
        return TilePlan(
            input_extent=Extent3(
                self.input_extent.t, self.input_extent.h * r, self.input_extent.w * r
            ),
            tile_size=Extent3(self.tile_size.t, self.tile_size.h * r, self.tile_size.w * r),
            overlap=(self.overlap[0], self.overlap[1] * r, self.overlap[2] * r),
            mode=self.mode,
            regions=tuple(region.scaled(r) for region in self.regions),
            valid_margin=None if margin is None else (margin[0], margin[1] * r, margin[2] * r),
        )

    def to_dict(self) -> dict:
        out = {
            "input_extent": list(self.input_extent.as_tuple()),
            "tile_size": list(self.tile_size.as_tuple()),
            "overlap": list(self.overlap),
            "mode": self.mode,
            "regions": [
                {
                    "index": region.index,
                    "origin": list(region.origin),
                    "size": list(region.size.as_tuple()),
                }
                for region in self.regions
            ],
        }
        if self.valid_margin is not None:
            out["valid_margin"] = list(self.valid_margin)
        return out


def axis_origins(extent: int, tile: int, overlap: int) -> list[int]:
    """Origins along one axis: 0, s, 2s, ... plus a final flush origin.

    The flush origin (extent - tile) keeps the last tile inside the input at
    the cost of a locally larger overlap; coincident origins collapse because
    the walk stops strictly before the flush position.
    """
    if tile > extent:
        raise PlanError(
            f"tile size {tile} exceeds input extent {extent}; "
            f"fall back to a single tile equal to the input extent"
        )
    if not 0 <= overlap < tile:
        raise ParameterError(
            f"overlap must satisfy 0 <= overlap < tile size, got {overlap} for tile {tile}"
        )
    stride = tile - overlap
    last = extent - tile
    origins = []
    pos = 0
    while pos < last:
        origins.append(pos)
        pos += stride
    origins.append(last)
    return origins


def plan_tiles(
    input_extent: Extent3,
    tile_size: Extent3,
    overlap: Coord3,
    mode: str = GAUSSIAN_BLEND,
    valid_margin: Coord3 | None = None,
) -> TilePlan:
    """Build the grid plan for ``input_extent``.

    Raises PlanError when a tile exceeds the input and ParameterError for
    overlap >= tile size or an unknown mode.
    """
    if mode not in PLAN_MODES:
        raise ParameterError(f"unknown plan mode {mode!r}; expected one of {PLAN_MODES}")
    per_axis = [
        axis_origins(e, t, o)
        for e, t, o in zip(input_extent.as_tuple(), tile_size.as_tuple(), overlap)
    ]
    regions = tuple(
        TileRegion(index=i, origin=origin, size=tile_size)
        for i, origin in enumerate(itertools.product(*per_axis), start=1)
    )
    return TilePlan(
        input_extent=input_extent,
        tile_size=tile_size,
        overlap=tuple(overlap),
        mode=mode,
        regions=regions,
        valid_margin=None if valid_margin is None else tuple(valid_margin),
    )


def plan_video_tubes(
    input_extent: Extent3,
    spatial_tile: tuple[int, int],
    temporal_tile: int | None,
    overlap: Coord3,
    valid_margin: Coord3 | None = None,
) -> TilePlan:
    """Plan spatio-temporal tubes for video inputs (valid-region mode).

    ``temporal_tile=None`` means full-duration tubes: a spatial patch
    extended over every frame of the input. A shorter temporal tile chunks
    the time axis with the same stride-and-flush rule as the spatial axes.
    """
    tube = Extent3(
        input_extent.t if temporal_tile is None else temporal_tile,
        spatial_tile[0],
        spatial_tile[1],
    )
    return plan_tiles(
        input_extent, tube, overlap, mode=VALID_REGION, valid_margin=valid_margin
    )

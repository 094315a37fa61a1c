"""Per-tile blend weights: separable Gaussian windows and binary valid masks.

Gaussian windows smooth overlapped stitching; they are strictly positive, so
they can never punch coverage holes into an otherwise correct plan. Valid
masks implement the video strategy of keeping only each tile's central
region and discarding its overlap margins. Windows are not normalized per
tile; normalization happens globally through the aggregate-weight
denominator during sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .geometry import GAUSSIAN_BLEND, Extent3, TilePlan

GAUSSIAN = "gaussian"
VALID_MASK = "valid_mask"

DEFAULT_SIGMA_FRAC = 0.33

# ((lo, hi) per axis): margins measured from each side of the tile.
AxisSides = tuple[tuple[int, int], tuple[int, int], tuple[int, int]]


@dataclass(frozen=True)
class BlendWindow:
    """Nonnegative per-cell weights over a tile's (t, h, w) extent."""

    weights: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.weights.ndim != 3:
            raise ParameterError(f"window weights must have 3 axes, got {self.weights.ndim}")
        if (self.weights < 0).any():
            raise ParameterError("window weights must be nonnegative")
        if float(self.weights.max()) <= 0.0:
            raise ParameterError("window must have at least one positive weight")

    @property
    def extent(self) -> Extent3:
        t, h, w = self.weights.shape
        return Extent3(t, h, w)


def _gaussian_axis(length: int, sigma_frac: float) -> np.ndarray:
    if length == 1:
        return np.ones(1, dtype=np.float64)
    center = (length - 1) / 2.0
    sigma = sigma_frac * length
    coords = np.arange(length, dtype=np.float64)
    return np.exp(-((coords - center) ** 2) / (2.0 * sigma * sigma))


def gaussian_window(extent: Extent3, sigma_frac: float = DEFAULT_SIGMA_FRAC) -> BlendWindow:
    """Separable Gaussian centered on the tile, sigma = sigma_frac * axis length.

    Axes of length 1 contribute a constant factor of 1, so image tiles
    (t = 1) reduce to the usual 2-D window.
    """
    if not 0.0 < sigma_frac <= 1.0:
        raise ParameterError(f"sigma_frac must be in (0, 1], got {sigma_frac}")
    t, h, w = extent.as_tuple()
    weights = (
        _gaussian_axis(t, sigma_frac)[:, None, None]
        * _gaussian_axis(h, sigma_frac)[None, :, None]
        * _gaussian_axis(w, sigma_frac)[None, None, :]
    )
    sigmas = tuple(sigma_frac * n for n in (t, h, w))
    return BlendWindow(
        weights=weights.astype(np.float32),
        kind=GAUSSIAN,
        params={"sigma_frac": sigma_frac, "sigma": sigmas},
    )


def valid_mask(extent: Extent3, margin: AxisSides, is_boundary: AxisSides | None = None) -> BlendWindow:
    """Binary mask: 1 on the retained central region, 0 on discarded margins.

    ``is_boundary`` flags sides where the tile touches the global input
    boundary; those margins are forced to 0 so the input edge stays covered.
    """
    sizes = extent.as_tuple()
    if is_boundary is None:
        is_boundary = ((False, False),) * 3
    effective = []
    for axis, ((lo, hi), (blo, bhi), size) in enumerate(zip(margin, is_boundary, sizes)):
        lo = 0 if blo else lo
        hi = 0 if bhi else hi
        if lo < 0 or hi < 0:
            raise ParameterError(f"margins must be nonnegative, got ({lo}, {hi})")
        if lo + hi >= size:
            raise ParameterError(
                f"margins ({lo}, {hi}) consume the whole tile on axis {'thw'[axis]} "
                f"(length {size}); nothing would be retained"
            )
        effective.append((lo, hi))
    weights = np.zeros(sizes, dtype=np.float32)
    (t_lo, t_hi), (h_lo, h_hi), (w_lo, w_hi) = effective
    weights[
        t_lo : sizes[0] - t_hi,
        h_lo : sizes[1] - h_hi,
        w_lo : sizes[2] - w_hi,
    ] = 1.0
    return BlendWindow(
        weights=weights,
        kind=VALID_MASK,
        params={"margin": tuple(effective)},
    )


def _axis_partition_margins(origins: list[int], tile: int) -> list[tuple[int, int]]:
    """Split each overlap band at its midpoint so retained spans partition the axis.

    Flush-clamped tiles can overlap their neighbor by more than the nominal
    overlap; deriving margins from actual neighbor positions keeps the
    exactly-one-owner property in that case too.
    """
    margins = []
    for j, origin in enumerate(origins):
        if j == 0:
            lo = 0
        else:
            boundary = (origins[j] + origins[j - 1] + tile) // 2
            lo = boundary - origin
        if j == len(origins) - 1:
            hi = 0
        else:
            boundary = (origins[j + 1] + origin + tile) // 2
            hi = origin + tile - boundary
        margins.append((lo, hi))
    return margins


def windows_for_plan(
    plan: TilePlan,
    kind: str | None = None,
    sigma_frac: float = DEFAULT_SIGMA_FRAC,
) -> list[BlendWindow]:
    """Build one window per plan region, in region order.

    Gaussian plans share a single window instance (uniform tile size). Valid
    masks honor ``plan.valid_margin`` when set; otherwise each overlap band
    is split at its midpoint, which partitions the input among tiles with no
    double ownership. Boundary sides always keep margin 0.
    """
    if kind is None:
        kind = GAUSSIAN if plan.mode == GAUSSIAN_BLEND else VALID_MASK
    if kind == GAUSSIAN:
        shared = gaussian_window(plan.tile_size, sigma_frac)
        return [shared] * len(plan.regions)
    if kind != VALID_MASK:
        raise ParameterError(f"unknown window kind {kind!r}")

    extent = plan.input_extent.as_tuple()
    tile = plan.tile_size.as_tuple()
    axis_origin_lists = [sorted({r.origin[a] for r in plan.regions}) for a in range(3)]
    if plan.valid_margin is None:
        margin_by_axis = [
            {o: m for o, m in zip(origins, _axis_partition_margins(origins, tile[a]))}
            for a, origins in enumerate(axis_origin_lists)
        ]
    else:
        margin_by_axis = [
            {o: (plan.valid_margin[a], plan.valid_margin[a]) for o in origins}
            for a, origins in enumerate(axis_origin_lists)
        ]

    windows = []
    for region in plan.regions:
        margin = tuple(margin_by_axis[a][region.origin[a]] for a in range(3))
        boundary = tuple(
            (region.origin[a] == 0, region.origin[a] + tile[a] == extent[a])
            for a in range(3)
        )
        windows.append(valid_mask(plan.tile_size, margin, boundary))
    return windows

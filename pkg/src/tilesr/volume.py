"""Dense 4-axis tensors and the crop / paste-accumulate / normalize kernel.

Layout is row-major (t, h, w, c) with channels innermost, so tile crops are
contiguous per row and the accumulation loops stay cache-friendly. Working
tensors are float32; the aggregation accumulators are float64 and get
truncated back to float32 at normalization, because overlap sums over many
tiles would otherwise lose precision.

The raw fixture format ("LVOL") is a little-endian header -- magic ``LVOL``
followed by four u32 extents (T, H, W, C) -- and float32 data in layout
order.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Union

import numpy as np

from .errors import BoundsError, CoverageError, ParameterError, ProtocolError, ShapeError
from .geometry import Extent3, TileRegion

if TYPE_CHECKING:
    from .windows import BlendWindow

LVOL_MAGIC = b"LVOL"
_HEADER = struct.Struct("<4sIIII")

EPS_ERROR = "error"
EPS_ZERO_FILL = "zero-fill"
EPS_POLICIES = (EPS_ERROR, EPS_ZERO_FILL)

_AXES = ("t", "h", "w")


@dataclass
class LatentVolume:
    """A (T, H, W, C) tensor of finite reals.

    Instances are validated on construction: four axes, all lengths >= 1, a
    float dtype, and no NaN/Inf anywhere. Operations below return fresh
    volumes except ``paste_accumulate``, which mutates its accumulator.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = self.data
        if arr.ndim != 4:
            raise ShapeError(f"volume data must have 4 axes (t,h,w,c), got {arr.ndim}")
        if any(n < 1 for n in arr.shape):
            raise ShapeError(f"volume axes must all be >= 1, got shape {arr.shape}")
        if arr.dtype not in (np.float32, np.float64):
            raise ParameterError(f"volume dtype must be float32 or float64, got {arr.dtype}")
        if not np.isfinite(arr).all():
            raise ParameterError("volume contains non-finite values (NaN or Inf)")

    @classmethod
    def zeros(cls, extent: Extent3, channels: int, dtype=np.float32) -> "LatentVolume":
        return cls(np.zeros((*extent.as_tuple(), channels), dtype=dtype))

    @classmethod
    def full(cls, extent: Extent3, channels: int, value: float, dtype=np.float32) -> "LatentVolume":
        return cls(np.full((*extent.as_tuple(), channels), value, dtype=dtype))

    @classmethod
    def from_array(cls, array, dtype=np.float32) -> "LatentVolume":
        return cls(np.ascontiguousarray(array, dtype=dtype))

    @property
    def extent(self) -> Extent3:
        t, h, w, _ = self.data.shape
        return Extent3(t, h, w)

    @property
    def channels(self) -> int:
        return self.data.shape[3]

    def copy(self) -> "LatentVolume":
        return LatentVolume(self.data.copy())

    def astype(self, dtype) -> "LatentVolume":
        return LatentVolume(self.data.astype(dtype))


def _check_region_inside(vol: LatentVolume, region: TileRegion) -> None:
    shape = vol.data.shape
    for axis, (name, origin, size) in enumerate(
        zip(_AXES, region.origin, region.size.as_tuple())
    ):
        if origin + size > shape[axis]:
            raise BoundsError(
                f"region {region.index} exceeds volume extent on axis {name}: "
                f"[{origin}, {origin + size}) vs length {shape[axis]}"
            )


def _region_slices(region: TileRegion):
    (t0, h0, w0), (ts, hs, ws) = region.origin, region.size.as_tuple()
    return (slice(t0, t0 + ts), slice(h0, h0 + hs), slice(w0, w0 + ws), slice(None))


def crop(vol: LatentVolume, region: TileRegion) -> LatentVolume:
    """Copy the sub-volume addressed by ``region`` (all channels)."""
    _check_region_inside(vol, region)
    return LatentVolume(vol.data[_region_slices(region)].copy())


def paste_accumulate(
    acc: LatentVolume,
    tile: LatentVolume,
    region: TileRegion,
    weight: Union["BlendWindow", np.ndarray],
) -> None:
    """acc[p] += weight[local(p)] * tile[local(p)] for every p in the region.

    The weight field has the tile's (t, h, w) extent and broadcasts over
    channels. Cells outside the region are untouched. The accumulator is
    typically float64 (see module docstring).
    """
    weights = getattr(weight, "weights", weight)
    if tile.extent.as_tuple() != region.size.as_tuple():
        raise ShapeError(
            f"tile extent {tile.extent.as_tuple()} does not match "
            f"region {region.index} size {region.size.as_tuple()}"
        )
    if tuple(weights.shape) != region.size.as_tuple():
        raise ShapeError(
            f"weight extent {tuple(weights.shape)} does not match "
            f"region {region.index} size {region.size.as_tuple()}"
        )
    if tile.channels != acc.channels:
        raise ShapeError(
            f"tile has {tile.channels} channels but accumulator has {acc.channels}"
        )
    _check_region_inside(acc, region)
    acc.data[_region_slices(region)] += weights[..., None] * tile.data


def divide_elementwise(
    num: LatentVolume, den: LatentVolume, eps_policy: str = EPS_ERROR
) -> LatentVolume:
    """Cellwise num/den, truncated to float32.

    ``den`` may have a single channel, broadcast over the numerator's. Cells
    where den == 0 are governed by ``eps_policy``: the default ``error``
    names the first uncovered coordinate (a correct plan covers every cell,
    so a zero here is a planning bug); ``zero-fill`` writes 0 and is meant
    for diagnostics only.
    """
    if eps_policy not in EPS_POLICIES:
        raise ParameterError(f"unknown eps policy {eps_policy!r}; expected {EPS_POLICIES}")
    if num.extent.as_tuple() != den.extent.as_tuple():
        raise ShapeError(
            f"extent mismatch: numerator {num.extent.as_tuple()} "
            f"vs denominator {den.extent.as_tuple()}"
        )
    if den.channels not in (1, num.channels):
        raise ShapeError(
            f"denominator channels must be 1 or {num.channels}, got {den.channels}"
        )
    den_field = den.data if den.channels == num.channels else den.data[..., :1]
    zero = den_field == 0.0
    if zero.any():
        if eps_policy == EPS_ERROR:
            t, h, w, _ = np.argwhere(zero)[0]
            raise CoverageError(
                f"no tile covers cell (t={t}, h={h}, w={w}): aggregate weight is zero"
            )
        out = np.divide(
            num.data.astype(np.float64),
            den_field.astype(np.float64),
            out=np.zeros(num.data.shape, dtype=np.float64),
            where=~zero,
        )
        return LatentVolume(out.astype(np.float32))
    out = num.data.astype(np.float64) / den_field.astype(np.float64)
    return LatentVolume(out.astype(np.float32))


def to_lvol_bytes(vol: LatentVolume) -> bytes:
    t, h, w, c = vol.data.shape
    header = _HEADER.pack(LVOL_MAGIC, t, h, w, c)
    return header + np.ascontiguousarray(vol.data, dtype="<f4").tobytes()


def from_lvol_bytes(blob: bytes) -> LatentVolume:
    if len(blob) < _HEADER.size:
        raise ProtocolError(f"LVOL payload too short: {len(blob)} bytes")
    magic, t, h, w, c = _HEADER.unpack_from(blob)
    if magic != LVOL_MAGIC:
        raise ProtocolError(f"bad LVOL magic {magic!r}")
    expected = _HEADER.size + 4 * t * h * w * c
    if len(blob) != expected:
        raise ProtocolError(
            f"LVOL payload size mismatch: got {len(blob)} bytes, "
            f"expected {expected} for extents ({t},{h},{w},{c})"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(t, h, w, c)
    return LatentVolume(np.ascontiguousarray(data, dtype=np.float32))


def write_lvol(vol: LatentVolume, path: str | Path) -> None:
    """Write atomically (temp file + rename) so failures leave no partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_lvol_bytes(vol))
    os.replace(tmp, path)


def read_lvol(path: str | Path) -> LatentVolume:
    return from_lvol_bytes(Path(path).read_bytes())

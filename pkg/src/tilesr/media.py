"""Media ingest/emit and bicubic pre-upsampling.

Images are PNG or PPM (P6); videos are directories of ordered frames, which
keeps the engine codec-free. Loaded values are scaled to [0, 1] float32;
saving clamps to [0, 1] and quantizes to 8-bit. The upsampler is a separable
Catmull-Rom bicubic (a = -0.5) with edge clamping, applied to the spatial
axes only.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import MediaError, ParameterError
from .volume import LatentVolume, read_lvol, write_lvol

KIND_IMAGE = "image"
KIND_VIDEO = "video"
KIND_RAW = "raw"

_FRAME_SUFFIXES = (".png", ".ppm")


@dataclass(frozen=True)
class MediaDescriptor:
    kind: str
    paths: tuple[str, ...]
    extent: tuple[int, int, int, int]
    pixel_format: str = "rgb8"


def detect_kind(path: str | Path) -> str:
    path = Path(path)
    if path.is_dir():
        return KIND_VIDEO
    if path.suffix.lower() == ".lvol":
        return KIND_RAW
    return KIND_IMAGE


def _frame_array(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode == "L":
                arr = np.asarray(img, dtype=np.float32)[..., None]
            else:
                arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise MediaError(f"cannot decode {path}: {exc}")
    return arr / 255.0


def load_media(path: str | Path, kind: str | None = None) -> tuple[LatentVolume, MediaDescriptor]:
    """Load an image, frame directory, or raw LVOL tensor.

    Video frames are ordered by filename; inconsistent frame sizes are an
    error identifying the offending frame.
    """
    path = Path(path)
    if not path.exists():
        raise MediaError(f"input path does not exist: {path}")
    kind = kind or detect_kind(path)
    if kind == KIND_RAW:
        vol = read_lvol(path)
        desc = MediaDescriptor(KIND_RAW, (str(path),), vol.data.shape, pixel_format="f32")
        return vol, desc
    if kind == KIND_IMAGE:
        frame = _frame_array(path)
        vol = LatentVolume.from_array(frame[None, ...])
        return vol, MediaDescriptor(KIND_IMAGE, (str(path),), vol.data.shape)
    if kind == KIND_VIDEO:
        frames = sorted(
            p for p in path.iterdir() if p.suffix.lower() in _FRAME_SUFFIXES
        )
        if not frames:
            raise MediaError(f"frame directory {path} contains no frames")
        arrays = []
        for frame_path in frames:
            arr = _frame_array(frame_path)
            if arrays and arr.shape != arrays[0].shape:
                raise MediaError(
                    f"frame {frame_path.name} has size {arr.shape[:2]}, "
                    f"expected {arrays[0].shape[:2]}"
                )
            arrays.append(arr)
        vol = LatentVolume.from_array(np.stack(arrays, axis=0))
        return vol, MediaDescriptor(KIND_VIDEO, tuple(str(p) for p in frames), vol.data.shape)
    raise MediaError(f"unknown media kind {kind!r}")


def _frame_image(vol: LatentVolume, t: int) -> Image.Image:
    frame = np.clip(vol.data[t], 0.0, 1.0)
    quantized = np.round(frame * 255.0).astype(np.uint8)
    if vol.channels == 1:
        return Image.fromarray(quantized[..., 0], mode="L")
    if vol.channels == 3:
        return Image.fromarray(quantized, mode="RGB")
    raise MediaError(f"cannot encode a {vol.channels}-channel volume as an image")


def frame_png_bytes(vol: LatentVolume, t: int = 0) -> bytes:
    buf = io.BytesIO()
    _frame_image(vol, t).save(buf, format="PNG")
    return buf.getvalue()


def save_media(vol: LatentVolume, path: str | Path, kind: str | None = None) -> None:
    """Write PNG/PPM (single frame), a frame directory (video), or raw LVOL.

    Single files are replaced atomically. Frame directories are assembled in
    a temporary sibling and renamed into place; an existing directory at the
    target is an error rather than an overwrite.
    """
    path = Path(path)
    if kind is None:
        if path.suffix.lower() == ".lvol":
            kind = KIND_RAW
        elif vol.extent.t > 1 or not path.suffix:
            kind = KIND_VIDEO
        else:
            kind = KIND_IMAGE
    if kind == KIND_RAW:
        write_lvol(vol, path)
        return
    if kind == KIND_IMAGE:
        if vol.extent.t != 1:
            raise MediaError(
                f"cannot save {vol.extent.t} frames to a single image; use a directory"
            )
        fmt = "PPM" if path.suffix.lower() == ".ppm" else "PNG"
        # Encode before touching the filesystem so a bad volume leaves nothing.
        buf = io.BytesIO()
        _frame_image(vol, 0).save(buf, format=fmt)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(buf.getvalue())
        os.replace(tmp, path)
        return
    if kind == KIND_VIDEO:
        if path.exists():
            raise MediaError(f"output directory {path} already exists; refusing to overwrite")
        encoded = []
        for t in range(vol.extent.t):
            buf = io.BytesIO()
            _frame_image(vol, t).save(buf, format="PNG")
            encoded.append(buf.getvalue())
        tmp = path.with_name(path.name + ".tmpdir")
        tmp.mkdir(parents=True)
        for t, blob in enumerate(encoded):
            (tmp / f"{t:06d}.png").write_bytes(blob)
        os.replace(tmp, path)
        return
    raise MediaError(f"unknown media kind {kind!r}")


def _catmull_rom_weights(phase: np.ndarray) -> np.ndarray:
    """Weights (4, n) for taps at offsets -1..2 around each sample phase."""
    t = phase
    t2 = t * t
    t3 = t2 * t
    # Catmull-Rom (a = -0.5) expanded per tap distance.
    w0 = -0.5 * t3 + t2 - 0.5 * t
    w1 = 1.5 * t3 - 2.5 * t2 + 1.0
    w2 = -1.5 * t3 + 2.0 * t2 + 0.5 * t
    w3 = 0.5 * t3 - 0.5 * t2
    return np.stack([w0, w1, w2, w3], axis=0)


def _upsample_axis(data: np.ndarray, axis: int, r: int) -> np.ndarray:
    n = data.shape[axis]
    out_n = n * r
    # Center-aligned sampling: output j reads source position (j + 0.5)/r - 0.5.
    x = (np.arange(out_n, dtype=np.float64) + 0.5) / r - 0.5
    base = np.floor(x).astype(np.int64)
    phase = x - base
    weights = _catmull_rom_weights(phase)
    out = np.zeros(data.shape[:axis] + (out_n,) + data.shape[axis + 1 :], dtype=np.float64)
    shape = [1] * data.ndim
    shape[axis] = out_n
    for k in range(4):
        taps = np.clip(base + (k - 1), 0, n - 1)
        out += np.take(data, taps, axis=axis) * weights[k].reshape(shape)
    return out


def bicubic_upsample(vol: LatentVolume, r: int) -> LatentVolume:
    """Scale rows and cols by integer factor r; time and channels untouched."""
    if not isinstance(r, int) or r < 1:
        raise ParameterError(f"upsample factor must be a positive integer, got {r!r}")
    if r == 1:
        return vol
    data = _upsample_axis(vol.data.astype(np.float64), 1, r)
    data = _upsample_axis(data, 2, r)
    return LatentVolume(data.astype(np.float32))

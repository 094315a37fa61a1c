"""Tiled diffusion super-resolution engine with per-tile prompt conditioning."""

__version__ = "0.1.0"

from .geometry import Extent3, TilePlan, TileRegion, plan_tiles, plan_video_tubes
from .guidance import GuidanceConfig, cfg_combine, guidance_direction, misguidance_norm
from .sampler import init_noise, run_tiled, run_untiled
from .schedules import TimestepSchedule
from .volume import LatentVolume, crop, divide_elementwise, paste_accumulate
from .windows import BlendWindow, gaussian_window, valid_mask

__all__ = [
    "__version__",
    "Extent3",
    "TilePlan",
    "TileRegion",
    "plan_tiles",
    "plan_video_tubes",
    "GuidanceConfig",
    "cfg_combine",
    "guidance_direction",
    "misguidance_norm",
    "init_noise",
    "run_tiled",
    "run_untiled",
    "TimestepSchedule",
    "LatentVolume",
    "crop",
    "divide_elementwise",
    "paste_accumulate",
    "BlendWindow",
    "gaussian_window",
    "valid_mask",
]

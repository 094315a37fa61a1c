"""Deterministic DDIM sampling and the tiled per-timestep orchestration loop.

One shared latent is denoised across all tiles: at every timestep each tile
is cropped out, denoised under its own text condition, guidance-combined,
and accumulated into weighted sums E and W; the merged estimate E / W then
drives a single DDIM update of the whole latent. With one full-extent tile
and a constant window this collapses exactly to the plain sampling loop.

Tile predictions may be computed concurrently, but accumulator commits are
serialized in ascending tile index, so outputs are byte-identical across
parallelism settings and across runs with the same seed.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .backends import DenoisePrediction, DenoiseRequest
from .errors import (
    BackendError,
    ContractViolationError,
    ManifestError,
    ParameterError,
    ScheduleError,
    ShapeError,
    TilesrError,
)
from .geometry import Extent3, TilePlan, TileRegion
from .guidance import (
    GuidanceConfig,
    MisguidanceReport,
    cfg_combine,
    field_norm,
    guidance_direction,
    misguidance_norm,
)
from .prompts import GLOBAL_TILE_INDEX, PromptManifest
from .schedules import TimestepSchedule
from .volume import EPS_ERROR, LatentVolume, crop, divide_elementwise, paste_accumulate
from .windows import DEFAULT_SIGMA_FRAC, windows_for_plan

MODE_GLOBAL = "global"
MODE_LOCAL = "local"
MODE_GLOBAL_LOCAL = "global+local"
PROMPT_MODES = (MODE_GLOBAL, MODE_LOCAL, MODE_GLOBAL_LOCAL)


def init_noise(extent: Extent3, channels: int, seed: int) -> LatentVolume:
    """Seeded i.i.d. standard-normal field (PCG64, fixed across platforms)."""
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((*extent.as_tuple(), channels), dtype=np.float32)
    return LatentVolume(data)


def ddim_step(
    z: LatentVolume, e_hat: LatentVolume, schedule: TimestepSchedule, step_index: int
) -> LatentVolume:
    """One deterministic DDIM update for epsilon-parameterized predictions.

    x0 = (z - sigma_m * e) / alpha_m, then z' = alpha_{m-1} x0 + sigma_{m-1} e.
    The final step returns x0 itself.
    """
    if not 0 <= step_index < len(schedule):
        raise ScheduleError(f"step index {step_index} outside schedule of {len(schedule)} steps")
    if z.data.shape != e_hat.data.shape:
        raise ShapeError(f"latent {z.data.shape} vs prediction {e_hat.data.shape}")
    alpha = np.float32(schedule.alphas[step_index])
    sigma = np.float32(schedule.sigmas[step_index])
    x0 = (z.data - sigma * e_hat.data) / alpha
    if step_index == len(schedule) - 1:
        return LatentVolume(x0)
    alpha_next = np.float32(schedule.alphas[step_index + 1])
    sigma_next = np.float32(schedule.sigmas[step_index + 1])
    return LatentVolume(alpha_next * x0 + sigma_next * e_hat.data)


def resolve_conditions(
    manifest: PromptManifest, plan: TilePlan, mode: str
) -> dict[int, str]:
    """Per-tile condition text under the requested prompt mode.

    ``global`` broadcasts the whole-input caption to every tile; ``local``
    uses each tile's own caption; ``global+local`` joins them with a period.
    """
    if mode not in PROMPT_MODES:
        raise ParameterError(f"unknown prompt mode {mode!r}; expected one of {PROMPT_MODES}")
    global_record = manifest.record_for(GLOBAL_TILE_INDEX)
    if mode in (MODE_GLOBAL, MODE_GLOBAL_LOCAL) and global_record is None:
        raise ManifestError("manifest has no whole-input record (tile index 0)")
    conditions: dict[int, str] = {}
    for region in plan.regions:
        local_record = manifest.record_for(region.index)
        if mode != MODE_GLOBAL and local_record is None:
            raise ManifestError(f"manifest has no record for tile {region.index}")
        if mode == MODE_GLOBAL:
            conditions[region.index] = global_record.text
        elif mode == MODE_LOCAL:
            conditions[region.index] = local_record.text
        else:
            conditions[region.index] = f"{global_record.text}. {local_record.text}"
    return conditions


@dataclass
class StageTimings:
    prompt_extraction: float = 0.0
    denoise: float = 0.0
    aggregation: float = 0.0
    decode: float = 0.0

    def total(self) -> float:
        return self.prompt_extraction + self.denoise + self.aggregation + self.decode

    def to_dict(self) -> dict[str, float]:
        return {
            "prompt_extraction_s": self.prompt_extraction,
            "denoise_s": self.denoise,
            "aggregation_s": self.aggregation,
            "decode_s": self.decode,
            "total_s": self.total(),
        }


@dataclass
class SamplerState:
    """Loop state: the shared latent plus the per-timestep accumulators."""

    z: LatentVolume
    step_index: int
    accum: LatentVolume | None = None
    weight_accum: LatentVolume | None = None
    seed: int = 0


@dataclass
class RunReport:
    config_hash: str
    seed: int
    backend: str
    mode: str
    tile_count: int
    steps: int
    parallelism: int
    timings: StageTimings = field(default_factory=StageTimings)
    per_tile_seconds: dict[int, float] = field(default_factory=dict)
    output_checksums: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "backend": self.backend,
            "mode": self.mode,
            "tile_count": self.tile_count,
            "steps": self.steps,
            "parallelism": self.parallelism,
            "timings": self.timings.to_dict(),
            "per_tile_seconds": {str(k): v for k, v in sorted(self.per_tile_seconds.items())},
            "output_checksums": dict(sorted(self.output_checksums.items())),
        }


ProbeFn = Callable[[TileRegion, float, DenoiseRequest, DenoisePrediction, LatentVolume], None]


def run_tiled(
    lr: LatentVolume,
    plan: TilePlan,
    conditions: Mapping[int, str],
    backend,
    schedule: TimestepSchedule,
    seed: int,
    guidance: GuidanceConfig | None = None,
    *,
    scale: int = 1,
    latent_channels: int | None = None,
    window_kind: str | None = None,
    sigma_frac: float = DEFAULT_SIGMA_FRAC,
    parallelism: int = 1,
    eps_policy: str = EPS_ERROR,
    timings: StageTimings | None = None,
    per_tile_seconds: dict[int, float] | None = None,
    probe: ProbeFn | None = None,
) -> LatentVolume:
    """Denoise a full latent tile-by-tile and return the final z.

    ``plan`` addresses the LR input; the latent lives at ``scale`` times its
    spatial extent and tile regions are scaled accordingly (1:1 in time).
    Decoding is the caller's responsibility. Backend and coverage failures
    abort the run with tile/timestep context; nothing partial is blended.
    """
    guidance = guidance or GuidanceConfig()
    if parallelism < 1:
        raise ParameterError(f"parallelism must be >= 1, got {parallelism}")
    for region in plan.regions:
        if region.index not in conditions:
            raise ManifestError(f"no condition resolved for tile {region.index}")

    hr_plan = plan.scaled(scale)
    channels = latent_channels or lr.channels
    windows = windows_for_plan(hr_plan, kind=window_kind, sigma_frac=sigma_frac)
    lr_tiles = {region.index: crop(lr, region) for region in plan.regions}
    unit_tile = LatentVolume.full(hr_plan.tile_size, 1, 1.0)
    state = SamplerState(
        z=init_noise(hr_plan.input_extent, channels, seed),
        step_index=0,
        seed=seed,
    )

    def predict_tile(task: tuple[TileRegion, float]) -> tuple[int, LatentVolume, float]:
        region, tau = task
        z_tile = crop(state.z, region)
        request = DenoiseRequest(
            latent_tile=z_tile,
            lr_tile=lr_tiles[region.index],
            condition=conditions[region.index],
            timestep=tau,
            want_uncond=guidance.enabled,
            seed=seed,
        )
        started = time.perf_counter()
        try:
            prediction = backend.predict(request)
        except TilesrError as exc:
            raise type(exc)(f"tile {region.index}, timestep {tau:.6g}: {exc}") from exc
        elapsed = time.perf_counter() - started
        if prediction.e_cond.data.shape != z_tile.data.shape:
            raise ContractViolationError(
                f"tile {region.index}: prediction shape {prediction.e_cond.data.shape} "
                f"does not match latent tile {z_tile.data.shape}"
            )
        if guidance.enabled and prediction.e_uncond is not None:
            combined = _guided(prediction, guidance.scale)
        else:
            combined = prediction.e_cond
        if probe is not None:
            probe(region, tau, request, prediction, combined)
        return region.index, combined, elapsed

    pool = ThreadPoolExecutor(max_workers=parallelism) if parallelism > 1 else None
    try:
        for step_index, tau in enumerate(schedule.taus):
            state.step_index = step_index
            tasks = [(region, tau) for region in hr_plan.regions]
            started = time.perf_counter()
            if pool is not None and len(tasks) > 1:
                results = list(pool.map(predict_tile, tasks))
            else:
                results = [predict_tile(task) for task in tasks]
            if timings is not None:
                timings.denoise += time.perf_counter() - started
            if per_tile_seconds is not None:
                for index, _, elapsed in results:
                    per_tile_seconds[index] = per_tile_seconds.get(index, 0.0) + elapsed

            started = time.perf_counter()
            state.accum = LatentVolume.zeros(hr_plan.input_extent, channels, dtype=np.float64)
            state.weight_accum = LatentVolume.zeros(hr_plan.input_extent, 1, dtype=np.float64)
            for (index, prediction_tile, _), region, window in zip(
                results, hr_plan.regions, windows
            ):
                paste_accumulate(state.accum, prediction_tile, region, window)
                paste_accumulate(state.weight_accum, unit_tile, region, window)
            try:
                e_hat = divide_elementwise(state.accum, state.weight_accum, eps_policy)
            except TilesrError as exc:
                raise type(exc)(f"timestep {tau:.6g}: {exc}") from exc
            state.z = ddim_step(state.z, e_hat, schedule, step_index)
            if timings is not None:
                timings.aggregation += time.perf_counter() - started
    finally:
        if pool is not None:
            pool.shutdown(wait=False, cancel_futures=True)
    return state.z


def _guided(prediction: DenoisePrediction, scale: float) -> LatentVolume:
    return cfg_combine(prediction.e_uncond, prediction.e_cond, scale)


def run_untiled(
    lr: LatentVolume,
    condition: str,
    backend,
    schedule: TimestepSchedule,
    seed: int,
    guidance: GuidanceConfig | None = None,
    *,
    scale: int = 1,
    latent_channels: int | None = None,
) -> LatentVolume:
    """Plain sampling loop with no tiling machinery; the single-tile reference."""
    guidance = guidance or GuidanceConfig()
    channels = latent_channels or lr.channels
    extent = Extent3(lr.extent.t, lr.extent.h * scale, lr.extent.w * scale)
    z = init_noise(extent, channels, seed)
    for step_index, tau in enumerate(schedule.taus):
        request = DenoiseRequest(
            latent_tile=z,
            lr_tile=lr,
            condition=condition,
            timestep=tau,
            want_uncond=guidance.enabled,
            seed=seed,
        )
        prediction = backend.predict(request)
        if guidance.enabled and prediction.e_uncond is not None:
            e_hat = _guided(prediction, guidance.scale)
        else:
            e_hat = prediction.e_cond
        z = ddim_step(z, e_hat, schedule, step_index)
    return z


def run_diagnose(
    lr: LatentVolume,
    plan: TilePlan,
    conditions: Mapping[int, str],
    reference_conditions: Mapping[int, str],
    backend,
    schedule: TimestepSchedule,
    seed: int,
    guidance: GuidanceConfig | None = None,
    *,
    scale: int = 1,
    latent_channels: int | None = None,
    window_kind: str | None = None,
    sigma_frac: float = DEFAULT_SIGMA_FRAC,
    eps_policy: str = EPS_ERROR,
) -> tuple[list[MisguidanceReport], LatentVolume]:
    """Run the sampling trajectory and measure per-tile prompt misguidance.

    At every (tile, timestep) the guidance direction under the condition in
    use is compared against the direction under that tile's reference
    (local) condition; the L2 deviation and the direction's own norm are
    reported. Tiles run sequentially so the report order is stable.
    """
    if guidance is None:
        guidance = GuidanceConfig()
    reports: list[MisguidanceReport] = []

    def probe(
        region: TileRegion,
        tau: float,
        request: DenoiseRequest,
        prediction: DenoisePrediction,
        _combined: LatentVolume,
    ) -> None:
        if prediction.e_uncond is None:
            raise BackendError(
                "backend returned no unconditional prediction; "
                "misguidance diagnostics need both branches"
            )
        reference = reference_conditions[region.index]
        if reference == request.condition:
            reference_prediction = prediction
        else:
            reference_prediction = backend.predict(
                DenoiseRequest(
                    latent_tile=request.latent_tile,
                    lr_tile=request.lr_tile,
                    condition=reference,
                    timestep=tau,
                    want_uncond=True,
                    seed=seed,
                )
            )
            if reference_prediction.e_uncond is None:
                raise BackendError(
                    "backend returned no unconditional prediction for the reference condition"
                )
        used_direction = guidance_direction(prediction.e_uncond, prediction.e_cond)
        reference_direction = guidance_direction(
            reference_prediction.e_uncond, reference_prediction.e_cond
        )
        reports.append(
            MisguidanceReport(
                tile_index=region.index,
                timestep=tau,
                delta_norm=misguidance_norm(used_direction, reference_direction),
                guidance_norm=field_norm(used_direction),
                reference_condition=reference,
            )
        )

    for region in plan.regions:
        if region.index not in reference_conditions:
            raise ManifestError(f"no reference condition for tile {region.index}")

    output = run_tiled(
        lr,
        plan,
        conditions,
        backend,
        schedule,
        seed,
        GuidanceConfig(scale=guidance.scale, enabled=True),
        scale=scale,
        latent_channels=latent_channels,
        window_kind=window_kind,
        sigma_frac=sigma_frac,
        parallelism=1,
        eps_policy=eps_policy,
        probe=probe,
    )
    return reports, output

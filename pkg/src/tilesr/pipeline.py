"""Config-driven commands: plan, extract, run, diagnose, bench.

This is the layer the service exposes; it owns input loading, manifest
reuse/extraction, the run itself, decode, and atomic persistence of
outputs. File writes go through temp-and-rename, so a failed command never
leaves a partial primary output behind.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import RemoteBackend, ToyBackend, ToyModelSpec
from .config import RunConfig
from .errors import ConfigError
from .geometry import Extent3, TilePlan, plan_tiles, plan_video_tubes
from .guidance import GuidanceConfig, MisguidanceReport, reports_to_csv
from .media import KIND_VIDEO, bicubic_upsample, detect_kind, load_media, save_media
from .prompts import (
    PromptManifest,
    StubExtractor,
    VisionChatExtractor,
    build_manifest,
    check_fingerprints,
    input_fingerprint,
    plan_fingerprint,
    read_manifest,
    write_manifest,
)
from .sampler import (
    MODE_GLOBAL_LOCAL,
    MODE_LOCAL,
    RunReport,
    StageTimings,
    resolve_conditions,
    run_diagnose,
    run_tiled,
)
from .schedules import TimestepSchedule
from .volume import LatentVolume, to_lvol_bytes, write_lvol


@dataclass
class PlanOutcome:
    plan: TilePlan
    listing: str


@dataclass
class ExtractOutcome:
    manifest: PromptManifest
    path: str = ""


@dataclass
class RunOutcome:
    report: RunReport
    output_path: str = ""
    raw_path: str = ""
    report_path: str = ""


@dataclass
class DiagnoseOutcome:
    csv_text: str
    reports: list[MisguidanceReport]
    seams: list[dict]


@dataclass
class BenchOutcome:
    rows: list[dict]
    overhead_ratio: float
    table: str


def _load_input(cfg: RunConfig) -> tuple[LatentVolume, str]:
    if not cfg.input.path:
        raise ConfigError("input.path is required")
    kind = cfg.input.kind or detect_kind(cfg.input.path)
    vol, _ = load_media(cfg.input.path, kind)
    return vol, kind


def _preprocess(cfg: RunConfig, vol: LatentVolume) -> tuple[LatentVolume, int]:
    """Apply pre-upsampling for refinement-style backends.

    Returns the conditioning volume plus the effective latent scale: after
    pre-upsampling the latent lives at the same extent as the (now enlarged)
    input, so the tile correspondence becomes 1:1.
    """
    if cfg.backend.pre_upsample and cfg.backend.scale > 1:
        return bicubic_upsample(vol, cfg.backend.scale), 1
    return vol, cfg.backend.scale


def build_plan(cfg: RunConfig, extent: Extent3) -> TilePlan:
    if cfg.plan.tile is None:
        raise ConfigError("plan.tile is required")
    tile = cfg.plan.tile
    if cfg.plan.kind == "video":
        return plan_video_tubes(
            extent,
            (tile[1], tile[2]),
            tile[0] if tile[0] > 0 else None,
            cfg.plan.overlap,
            cfg.plan.valid_margin,
        )
    mode = cfg.plan.mode or "gaussian_blend"
    if any(v == 0 for v in tile):
        raise ConfigError("plan.tile entries must be >= 1 for image plans")
    return plan_tiles(extent, Extent3(*tile), cfg.plan.overlap, mode, cfg.plan.valid_margin)


def _plan_listing(plan: TilePlan) -> str:
    lines = [
        f"plan: {len(plan.regions)} tiles of {plan.tile_size.as_tuple()} "
        f"over {plan.input_extent.as_tuple()}, overlap {tuple(plan.overlap)}, mode {plan.mode}"
    ]
    for region in plan.regions:
        lines.append(
            f"  tile {region.index:4d}  origin {region.origin}  size {region.size.as_tuple()}"
        )
    return "\n".join(lines)


def execute_plan(cfg: RunConfig) -> PlanOutcome:
    vol, _ = _load_input(cfg)
    vol, _ = _preprocess(cfg, vol)
    plan = build_plan(cfg, vol.extent)
    return PlanOutcome(plan=plan, listing=_plan_listing(plan))


def _make_schedule(cfg: RunConfig) -> TimestepSchedule:
    return TimestepSchedule.linear(cfg.schedule.steps, cfg.schedule.theta_max)


def _make_backend(cfg: RunConfig, schedule: TimestepSchedule):
    if cfg.backend.kind == "toy":
        spec = ToyModelSpec(
            schedule=schedule,
            condition_means=cfg.backend.toy.condition_means,
            default_mean=cfg.backend.toy.default_mean,
        )
        return ToyBackend(spec)
    if not cfg.backend.endpoint:
        raise ConfigError("backend.endpoint is required for the remote backend")
    return RemoteBackend(
        endpoint=cfg.backend.endpoint,
        scale=cfg.backend.scale,
        timeout=cfg.backend.timeout,
        retries=cfg.backend.retries,
        retry_backoff=cfg.backend.retry_backoff,
        max_inflight=cfg.backend.max_inflight,
        decode_scale=cfg.backend.decode_scale,
        decode_tile=cfg.backend.decode_tile,
        decode_overlap=cfg.backend.decode_overlap,
    )


def _make_extractor(cfg: RunConfig):
    if cfg.extractor.kind == "stub":
        return StubExtractor()
    if not cfg.extractor.endpoint:
        raise ConfigError("extractor.endpoint is required for the vision-chat extractor")
    return VisionChatExtractor(
        endpoint=cfg.extractor.endpoint,
        model=cfg.extractor.model,
        temperature=cfg.extractor.temperature,
        caption_path=cfg.extractor.caption_path,
        timeout=cfg.extractor.timeout,
        retries=cfg.extractor.retries,
    )


def _extract_manifest(
    cfg: RunConfig, vol: LatentVolume, plan: TilePlan, mode: str, eff_scale: int
) -> PromptManifest:
    extractor = _make_extractor(cfg)
    try:
        return build_manifest(
            vol,
            plan,
            extractor,
            mode,
            cfg.seed,
            kind=KIND_VIDEO if cfg.plan.kind == "video" else "image",
            frame_budget=cfg.extractor.frame_budget,
            upsample=eff_scale,
            crop_only=cfg.extractor.crop_only,
            max_inflight=cfg.extractor.max_inflight,
        )
    finally:
        close = getattr(extractor, "close", None)
        if close:
            close()


def _obtain_manifest(
    cfg: RunConfig,
    vol: LatentVolume,
    plan: TilePlan,
    mode: str,
    eff_scale: int,
    timings: StageTimings,
) -> PromptManifest:
    if cfg.prompts.path:
        manifest = read_manifest(cfg.prompts.path)
        check_fingerprints(
            manifest,
            input_fingerprint(vol),
            plan_fingerprint(plan),
            allow_stale=cfg.prompts.allow_stale,
        )
        return manifest
    started = time.perf_counter()
    manifest = _extract_manifest(cfg, vol, plan, mode, eff_scale)
    timings.prompt_extraction += time.perf_counter() - started
    return manifest


def execute_extract(cfg: RunConfig) -> ExtractOutcome:
    vol, _ = _load_input(cfg)
    vol, eff_scale = _preprocess(cfg, vol)
    plan = build_plan(cfg, vol.extent)
    manifest = _extract_manifest(cfg, vol, plan, cfg.extractor.mode, eff_scale)
    path = cfg.output.manifest
    if path:
        write_manifest(manifest, path)
    return ExtractOutcome(manifest=manifest, path=path)


def _checksum_path(path: Path) -> str:
    digest = hashlib.sha256()
    if path.is_dir():
        for child in sorted(path.iterdir()):
            digest.update(child.name.encode())
            digest.update(child.read_bytes())
    else:
        digest.update(path.read_bytes())
    return digest.hexdigest()


def _run_core(cfg: RunConfig) -> tuple[LatentVolume, RunReport, PromptManifest]:
    """Load, plan, condition, sample, decode; no file output."""
    timings = StageTimings()
    per_tile: dict[int, float] = {}
    vol, _ = _load_input(cfg)
    vol, eff_scale = _preprocess(cfg, vol)
    plan = build_plan(cfg, vol.extent)
    mode = cfg.extractor.mode
    manifest = _obtain_manifest(cfg, vol, plan, mode, eff_scale, timings)
    conditions = resolve_conditions(manifest, plan, mode)
    schedule = _make_schedule(cfg)
    backend = _make_backend(cfg, schedule)
    guidance = GuidanceConfig(scale=cfg.guidance.scale, enabled=cfg.guidance.enabled)
    try:
        z0 = run_tiled(
            vol,
            plan,
            conditions,
            backend,
            schedule,
            cfg.seed,
            guidance,
            scale=eff_scale,
            latent_channels=cfg.backend.latent_channels or None,
            window_kind=cfg.window.kind or None,
            sigma_frac=cfg.window.sigma_frac,
            parallelism=cfg.parallelism,
            timings=timings,
            per_tile_seconds=per_tile,
        )
        started = time.perf_counter()
        out = backend.decode(z0)
        timings.decode += time.perf_counter() - started
    finally:
        close = getattr(backend, "close", None)
        if close:
            close()
    report = RunReport(
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        backend=cfg.backend.kind,
        mode=mode,
        tile_count=len(plan),
        steps=cfg.schedule.steps,
        parallelism=cfg.parallelism,
        timings=timings,
        per_tile_seconds=per_tile,
    )
    return out, report, manifest


def _write_report(report: RunReport, path: str) -> None:
    target = Path(path)
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, target)


def execute_run(cfg: RunConfig) -> RunOutcome:
    out, report, _ = _run_core(cfg)
    if cfg.output.path:
        save_media(out, cfg.output.path)
        report.output_checksums[cfg.output.path] = _checksum_path(Path(cfg.output.path))
    if cfg.output.raw:
        write_lvol(out, cfg.output.raw)
        report.output_checksums[cfg.output.raw] = _checksum_path(Path(cfg.output.raw))
    if not report.output_checksums:
        report.output_checksums["<memory>"] = hashlib.sha256(to_lvol_bytes(out)).hexdigest()
    if cfg.output.report:
        _write_report(report, cfg.output.report)
    return RunOutcome(
        report=report,
        output_path=cfg.output.path,
        raw_path=cfg.output.raw,
        report_path=cfg.output.report,
    )


def _adjacent_pairs(plan: TilePlan) -> list[tuple[int, int, int]]:
    """(index_a, index_b, axis) for regions adjacent along exactly one axis."""
    pairs = []
    regions = plan.regions
    for i, a in enumerate(regions):
        for b in regions[i + 1 :]:
            differing = [ax for ax in range(3) if a.origin[ax] != b.origin[ax]]
            if len(differing) != 1:
                continue
            axis = differing[0]
            lo = max(a.origin[axis], b.origin[axis])
            hi = min(a.end[axis], b.end[axis])
            if lo < hi:
                pairs.append((a.index, b.index, axis))
    return pairs


def _seam_metrics(out: LatentVolume, plan: TilePlan) -> list[dict]:
    metrics = []
    by_index = {region.index: region for region in plan.regions}
    for index_a, index_b, axis in _adjacent_pairs(plan):
        a, b = by_index[index_a], by_index[index_b]
        lo = max(a.origin[axis], b.origin[axis])
        hi = min(a.end[axis], b.end[axis])
        window = [slice(None)] * 4
        window[axis] = slice(lo, hi)
        band = out.data[tuple(window)]
        other_axes = tuple(ax for ax in range(4) if ax != axis)
        profile = band.mean(axis=other_axes, dtype=np.float64)
        diffs = np.diff(profile)
        if len(diffs) == 0:
            monotone = True
        else:
            monotone = bool((diffs >= -1e-6).all() or (diffs <= 1e-6).all())
        metrics.append(
            {
                "tiles": [index_a, index_b],
                "axis": "thw"[axis],
                "band": [int(lo), int(hi)],
                "monotone": monotone,
                "min": float(band.min()),
                "max": float(band.max()),
            }
        )
    return metrics


def execute_diagnose(cfg: RunConfig) -> DiagnoseOutcome:
    timings = StageTimings()
    vol, _ = _load_input(cfg)
    vol, eff_scale = _preprocess(cfg, vol)
    plan = build_plan(cfg, vol.extent)
    mode = cfg.extractor.mode
    # The reference (ideal) direction always needs local prompts; extract
    # both captions when building the manifest in-line.
    manifest_mode = MODE_GLOBAL_LOCAL if mode != MODE_LOCAL else MODE_LOCAL
    manifest = _obtain_manifest(cfg, vol, plan, manifest_mode, eff_scale, timings)
    conditions = resolve_conditions(manifest, plan, mode)
    references = resolve_conditions(manifest, plan, MODE_LOCAL)
    schedule = _make_schedule(cfg)
    backend = _make_backend(cfg, schedule)
    guidance = GuidanceConfig(scale=cfg.guidance.scale, enabled=True)
    try:
        reports, out = run_diagnose(
            vol,
            plan,
            conditions,
            references,
            backend,
            schedule,
            cfg.seed,
            guidance,
            scale=eff_scale,
            latent_channels=cfg.backend.latent_channels or None,
            window_kind=cfg.window.kind or None,
            sigma_frac=cfg.window.sigma_frac,
        )
    finally:
        close = getattr(backend, "close", None)
        if close:
            close()
    seams = _seam_metrics(out, plan.scaled(eff_scale))
    return DiagnoseOutcome(csv_text=reports_to_csv(reports), reports=reports, seams=seams)


def execute_bench(cfg: RunConfig) -> BenchOutcome:
    """Time a baseline (global prompt) run against a tiled-prompt run.

    Both runs share the seed and differ only in prompt mode, so the reported
    overhead isolates prompt extraction plus any conditioning cost. Outputs
    are checksummed in memory; bench never writes primary outputs.
    """
    rows = []
    for label_mode, mode in (("baseline (global prompt)", "global"), ("tiled", MODE_LOCAL)):
        run_cfg = copy.deepcopy(cfg)
        run_cfg.extractor.mode = mode
        run_cfg.prompts.path = ""
        run_cfg.output.path = ""
        run_cfg.output.raw = ""
        run_cfg.output.report = ""
        out, report, _ = _run_core(run_cfg)
        label = (
            label_mode
            if mode == "global"
            else f"+ tiled prompts ({report.tile_count})"
        )
        rows.append(
            {
                "label": label,
                "mode": mode,
                "tiles": report.tile_count,
                "prompt_extraction_s": report.timings.prompt_extraction,
                "denoise_s": report.timings.denoise,
                "aggregation_s": report.timings.aggregation,
                "decode_s": report.timings.decode,
                "total_s": report.timings.total(),
                "output_checksum": hashlib.sha256(to_lvol_bytes(out)).hexdigest(),
            }
        )
    baseline_total = rows[0]["total_s"]
    overhead = rows[1]["total_s"] / baseline_total if baseline_total > 0 else float("inf")
    header = (
        f"{'method':32s} {'tiles':>5s} {'prompt_s':>10s} {'denoise_s':>10s} "
        f"{'aggr_s':>10s} {'decode_s':>10s} {'total_s':>10s}"
    )
    lines = [header]
    for row in rows:
        lines.append(
            f"{row['label']:32s} {row['tiles']:5d} {row['prompt_extraction_s']:10.4f} "
            f"{row['denoise_s']:10.4f} {row['aggregation_s']:10.4f} "
            f"{row['decode_s']:10.4f} {row['total_s']:10.4f}"
        )
    lines.append(f"overhead ratio (tiled / baseline): {overhead:.4f}")
    return BenchOutcome(rows=rows, overhead_ratio=overhead, table="\n".join(lines))

"""Request/response models for the engine service.

Every command accepts the same config envelope: raw TOML text or a parsed
mapping, plus dotted-key overrides (the thin CLI client maps its flags onto
these). Paths inside a config refer to the service host's filesystem.
"""

from __future__ import annotations

from typing import Any

from pydantic import BaseModel, Field


class ConfigEnvelope(BaseModel):
    config_toml: str | None = None
    config: dict[str, Any] | None = None
    overrides: dict[str, Any] = Field(default_factory=dict)


class RegionModel(BaseModel):
    index: int
    origin: list[int]
    size: list[int]


class PlanResponse(BaseModel):
    input_extent: list[int]
    tile_size: list[int]
    overlap: list[int]
    mode: str
    regions: list[RegionModel]
    valid_margin: list[int] | None = None
    listing: str


class PromptRecordModel(BaseModel):
    tile_index: int
    text: str
    extractor_id: str
    seed: int
    created_at: str
    region: dict[str, list[int]] | None = None


class ManifestModel(BaseModel):
    input_fingerprint: str
    plan_fingerprint: str
    records: list[PromptRecordModel]


class ExtractResponse(BaseModel):
    manifest: ManifestModel
    path: str = ""


class TimingsModel(BaseModel):
    prompt_extraction_s: float
    denoise_s: float
    aggregation_s: float
    decode_s: float
    total_s: float


class RunReportModel(BaseModel):
    config_hash: str
    seed: int
    backend: str
    mode: str
    tile_count: int
    steps: int
    parallelism: int
    timings: TimingsModel
    per_tile_seconds: dict[str, float]
    output_checksums: dict[str, str]


class RunResponse(BaseModel):
    report: RunReportModel
    output_path: str = ""
    raw_path: str = ""
    report_path: str = ""


class MisguidanceRowModel(BaseModel):
    tile_index: int
    timestep: float
    delta_norm: float
    guidance_norm: float
    reference_condition: str


class SeamModel(BaseModel):
    tiles: list[int]
    axis: str
    band: list[int]
    monotone: bool
    min: float
    max: float


class DiagnoseResponse(BaseModel):
    csv: str
    reports: list[MisguidanceRowModel]
    seams: list[SeamModel]


class BenchRowModel(BaseModel):
    label: str
    mode: str
    tiles: int
    prompt_extraction_s: float
    denoise_s: float
    aggregation_s: float
    decode_s: float
    total_s: float
    output_checksum: str


class BenchResponse(BaseModel):
    rows: list[BenchRowModel]
    overhead_ratio: float
    table: str


class ErrorDetail(BaseModel):
    category: str
    message: str


class ErrorResponse(BaseModel):
    error: ErrorDetail


class HealthResponse(BaseModel):
    status: str
    version: str

"""Per-tile prompt extraction and the persisted prompt manifest.

A manifest binds one caption per tile (plus an optional whole-input caption
at index 0) to a specific input and plan via content fingerprints, so stale
prompts can never silently condition a different run. The extractor is
pluggable: a deterministic stub for tests and offline runs, and a
vision-chat HTTP client for real caption models. Image tiles are sent as an
(input image, upsampled patch crop) pair; video tiles additionally carry
frames of the full input sequence so the extractor can describe local
dynamics it could not infer from a small tube alone.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import httpx
import numpy as np

from . import templates
from .errors import ExtractionError, ManifestError, ParameterError
from .geometry import Extent3, TilePlan, TileRegion
from .media import KIND_IMAGE, KIND_VIDEO, bicubic_upsample, frame_png_bytes
from .volume import LatentVolume, crop, to_lvol_bytes

GLOBAL_TILE_INDEX = 0

RETRYABLE_STATUS = (429, 500, 502, 503, 504)


@dataclass(frozen=True)
class MediaGroup:
    """One logical media item in a caption request (an image, or video frames)."""

    label: str
    mime: str
    frames: tuple[bytes, ...]


@dataclass(frozen=True)
class CaptionRequest:
    tile_index: int
    seed: int
    system: str
    user: str
    media: tuple[MediaGroup, ...]


@dataclass(frozen=True)
class PromptRecord:
    tile_index: int
    text: str
    extractor_id: str
    seed: int
    created_at: str
    region: TileRegion | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise ParameterError(f"prompt text for tile {self.tile_index} is empty")

    def to_dict(self) -> dict:
        out = {
            "tile_index": self.tile_index,
            "text": self.text,
            "extractor_id": self.extractor_id,
            "seed": self.seed,
            "created_at": self.created_at,
        }
        if self.region is not None:
            out["region"] = {
                "origin": list(self.region.origin),
                "size": list(self.region.size.as_tuple()),
            }
        return out


@dataclass(frozen=True)
class PromptManifest:
    input_fingerprint: str
    plan_fingerprint: str
    records: tuple[PromptRecord, ...]

    def __post_init__(self):
        seen = set()
        for record in self.records:
            if record.tile_index in seen:
                raise ManifestError(f"duplicate record for tile {record.tile_index}")
            seen.add(record.tile_index)

    def record_for(self, tile_index: int) -> PromptRecord | None:
        for record in self.records:
            if record.tile_index == tile_index:
                return record
        return None

    def to_dict(self) -> dict:
        return {
            "input_fingerprint": self.input_fingerprint,
            "plan_fingerprint": self.plan_fingerprint,
            "records": [record.to_dict() for record in self.records],
        }


def input_fingerprint(vol: LatentVolume) -> str:
    return hashlib.sha256(to_lvol_bytes(vol)).hexdigest()


def plan_fingerprint(plan: TilePlan) -> str:
    canonical = json.dumps(plan.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


class StubExtractor:
    """Deterministic caption stub: a pure function of (media bytes, tile, seed)."""

    extractor_id = "stub"

    def describe(self, request: CaptionRequest) -> str:
        digest = hashlib.sha256()
        for group in request.media:
            for frame in group.frames:
                digest.update(frame)
        digest.update(str(request.tile_index).encode())
        digest.update(str(request.seed).encode())
        tag = digest.hexdigest()[:8]
        if request.tile_index == GLOBAL_TILE_INDEX:
            return f"stub-global-{tag}"
        return f"stub-tile-{request.tile_index}-{tag}"


class VisionChatExtractor:
    """Client for chat-completion style vision endpoints.

    The request body is a ``messages`` array: a system text part plus a user
    turn holding the template text and base64 data-URL media parts. The
    response field holding the caption is configurable (dotted path with
    integer list indices), defaulting to the common
    ``choices.0.message.content``.
    """

    def __init__(
        self,
        endpoint: str,
        model: str = "default",
        temperature: float = 0.0,
        caption_path: str = "choices.0.message.content",
        timeout: float = 30.0,
        retries: int = 3,
        retry_backoff: float = 0.05,
        transport: httpx.BaseTransport | None = None,
    ):
        if not endpoint:
            raise ParameterError("vision-chat extractor needs an endpoint")
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.caption_path = caption_path
        self.retries = max(1, retries)
        self.retry_backoff = retry_backoff
        self._client = httpx.Client(timeout=timeout, transport=transport)

    @property
    def extractor_id(self) -> str:
        return f"vision-chat:{self.model}"

    def close(self) -> None:
        self._client.close()

    def _content_parts(self, request: CaptionRequest) -> list[dict]:
        parts: list[dict] = [{"type": "text", "text": request.user}]
        for group in request.media:
            if not group.mime.startswith("image/"):
                raise ExtractionError(
                    f"vision-chat extractor cannot send {group.mime} media "
                    f"(group {group.label!r}); inputs must be renderable as images"
                )
            parts.append({"type": "text", "text": f"[{group.label}]"})
            for frame in group.frames:
                encoded = base64.b64encode(frame).decode()
                parts.append(
                    {
                        "type": "image_url",
                        "image_url": {"url": f"data:{group.mime};base64,{encoded}"},
                    }
                )
        return parts

    def _extract_caption(self, payload: dict) -> str:
        node = payload
        for key in self.caption_path.split("."):
            try:
                node = node[int(key)] if isinstance(node, list) else node[key]
            except (KeyError, IndexError, TypeError, ValueError):
                raise ExtractionError(
                    f"caption path {self.caption_path!r} not found in extractor response"
                )
        if not isinstance(node, str) or not node.strip():
            raise ExtractionError("extractor returned an empty caption")
        return node.strip()

    def describe(self, request: CaptionRequest) -> str:
        body = {
            "model": self.model,
            "temperature": self.temperature,
            "seed": request.seed,
            "messages": [
                {"role": "system", "content": [{"type": "text", "text": request.system}]},
                {"role": "user", "content": self._content_parts(request)},
            ],
        }
        attempts = 0
        last_error = ""
        while attempts < self.retries:
            attempts += 1
            try:
                response = self._client.post(self.endpoint, json=body)
            except httpx.HTTPError as exc:
                last_error = f"transport failure: {exc}"
            else:
                if response.status_code in RETRYABLE_STATUS:
                    last_error = f"server returned {response.status_code}"
                elif response.status_code != 200:
                    raise ExtractionError(
                        f"extractor answered {response.status_code}: {response.text[:200]}"
                    )
                else:
                    try:
                        payload = response.json()
                    except json.JSONDecodeError as exc:
                        raise ExtractionError(f"extractor response is not JSON: {exc}")
                    return self._extract_caption(payload)
            if attempts < self.retries:
                time.sleep(self.retry_backoff * attempts)
        raise ExtractionError(
            f"extractor unreachable after {attempts} attempts: {last_error}"
        )


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _media_group(vol: LatentVolume, label: str, frame_budget: int | None = None) -> MediaGroup:
    """Encode a volume as PNG frames, or raw tensor bytes if not renderable."""
    if vol.channels in (1, 3):
        t = vol.extent.t
        if frame_budget is None or t <= frame_budget:
            indices = range(t)
        else:
            indices = sorted(set(np.linspace(0, t - 1, frame_budget).round().astype(int)))
        frames = tuple(frame_png_bytes(vol, i) for i in indices)
        return MediaGroup(label=label, mime="image/png", frames=frames)
    return MediaGroup(label=label, mime="application/octet-stream", frames=(to_lvol_bytes(vol),))


def extract_global(
    lr: LatentVolume,
    extractor,
    seed: int,
    kind: str = KIND_IMAGE,
    frame_budget: int = 16,
) -> PromptRecord:
    """One caption for the whole input (record index 0)."""
    if kind == KIND_VIDEO:
        media = (_media_group(lr, "video", frame_budget),)
        user = templates.VIDEO_GLOBAL_USER_PROMPT
    else:
        media = (_media_group(lr, "image"),)
        user = templates.IMAGE_GLOBAL_USER_PROMPT
    text = extractor.describe(
        CaptionRequest(GLOBAL_TILE_INDEX, seed, templates.SYSTEM_PROMPT, user, media)
    )
    return PromptRecord(
        tile_index=GLOBAL_TILE_INDEX,
        text=text,
        extractor_id=extractor.extractor_id,
        seed=seed,
        created_at=_now(),
    )


def _extract_regions(plan, describe_one, max_inflight: int) -> list:
    if max_inflight > 1 and len(plan.regions) > 1:
        with ThreadPoolExecutor(max_workers=max_inflight) as pool:
            return list(pool.map(describe_one, plan.regions))
    return [describe_one(region) for region in plan.regions]


def extract_tiled_image(
    lr: LatentVolume,
    plan: TilePlan,
    extractor,
    base_seed: int,
    upsample: int = 1,
    crop_only: bool = False,
    max_inflight: int = 4,
) -> PromptManifest:
    """One caption per plan region from (full input, upsampled crop) pairs.

    ``crop_only`` drops the full-input part for ablation runs. Per-tile
    seeds are base_seed + tile index and are recorded in the manifest.
    Records are keyed by tile index, so concurrent completion order never
    changes the result.
    """
    full_group = _media_group(lr, "first image")
    created = _now()

    def describe_one(region: TileRegion) -> PromptRecord:
        tile = crop(lr, region)
        if upsample > 1:
            tile = bicubic_upsample(tile, upsample)
        patch_group = _media_group(tile, "second image")
        media = (patch_group,) if crop_only else (full_group, patch_group)
        seed = base_seed + region.index
        text = extractor.describe(
            CaptionRequest(
                region.index, seed, templates.SYSTEM_PROMPT,
                templates.IMAGE_TILE_USER_PROMPT, media,
            )
        )
        return PromptRecord(
            tile_index=region.index,
            text=text,
            extractor_id=extractor.extractor_id,
            seed=seed,
            created_at=created,
            region=region,
        )

    records = _extract_regions(plan, describe_one, max_inflight)
    return PromptManifest(
        input_fingerprint=input_fingerprint(lr),
        plan_fingerprint=plan_fingerprint(plan),
        records=tuple(sorted(records, key=lambda r: r.tile_index)),
    )


def extract_tiled_video(
    lr: LatentVolume,
    plan: TilePlan,
    extractor,
    base_seed: int,
    frame_budget: int = 16,
    max_inflight: int = 4,
) -> PromptManifest:
    """Context-assisted video captions: full-sequence frames plus the tile tube.

    Sharing the full input across requests gives the extractor the global
    context it needs to describe local motion, while the caption stays
    anchored to the tube's own content.
    """
    context_group = _media_group(lr, "first video", frame_budget)
    created = _now()

    def describe_one(region: TileRegion) -> PromptRecord:
        tube = crop(lr, region)
        tube_group = _media_group(tube, "second video", frame_budget)
        seed = base_seed + region.index
        text = extractor.describe(
            CaptionRequest(
                region.index, seed, templates.SYSTEM_PROMPT,
                templates.VIDEO_TILE_USER_PROMPT, (context_group, tube_group),
            )
        )
        return PromptRecord(
            tile_index=region.index,
            text=text,
            extractor_id=extractor.extractor_id,
            seed=seed,
            created_at=created,
            region=region,
        )

    records = _extract_regions(plan, describe_one, max_inflight)
    return PromptManifest(
        input_fingerprint=input_fingerprint(lr),
        plan_fingerprint=plan_fingerprint(plan),
        records=tuple(sorted(records, key=lambda r: r.tile_index)),
    )


def build_manifest(
    lr: LatentVolume,
    plan: TilePlan,
    extractor,
    mode: str,
    base_seed: int,
    kind: str = KIND_IMAGE,
    frame_budget: int = 16,
    upsample: int = 1,
    crop_only: bool = False,
    max_inflight: int = 4,
) -> PromptManifest:
    """Extract exactly the records a run in ``mode`` will need."""
    records: list[PromptRecord] = []
    if mode in ("global", "global+local"):
        records.append(extract_global(lr, extractor, base_seed, kind, frame_budget))
    if mode in ("local", "global+local"):
        if kind == KIND_VIDEO:
            tiled = extract_tiled_video(lr, plan, extractor, base_seed, frame_budget, max_inflight)
        else:
            tiled = extract_tiled_image(lr, plan, extractor, base_seed, upsample, crop_only, max_inflight)
        records.extend(tiled.records)
    if not records:
        raise ParameterError(f"unknown prompt mode {mode!r}")
    return PromptManifest(
        input_fingerprint=input_fingerprint(lr),
        plan_fingerprint=plan_fingerprint(plan),
        records=tuple(records),
    )


def manifest_from_dict(payload: dict) -> PromptManifest:
    try:
        records = []
        for raw in payload["records"]:
            region = None
            if raw.get("region") is not None:
                region = TileRegion(
                    index=raw["tile_index"],
                    origin=tuple(raw["region"]["origin"]),
                    size=Extent3(*raw["region"]["size"]),
                )
            records.append(
                PromptRecord(
                    tile_index=raw["tile_index"],
                    text=raw["text"],
                    extractor_id=raw["extractor_id"],
                    seed=raw["seed"],
                    created_at=raw["created_at"],
                    region=region,
                )
            )
        return PromptManifest(
            input_fingerprint=payload["input_fingerprint"],
            plan_fingerprint=payload["plan_fingerprint"],
            records=tuple(records),
        )
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"manifest is missing required field: {exc}")


def write_manifest(manifest: PromptManifest, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def read_manifest(path: str | Path) -> PromptManifest:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest parse error at line {exc.lineno}: {exc.msg}")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest: {exc}")
    return manifest_from_dict(payload)


def check_fingerprints(
    manifest: PromptManifest,
    input_fp: str,
    plan_fp: str,
    allow_stale: bool = False,
) -> None:
    if allow_stale:
        return
    if manifest.input_fingerprint != input_fp:
        raise ManifestError(
            "manifest was extracted from a different input "
            f"(fingerprint {manifest.input_fingerprint[:12]}... vs {input_fp[:12]}...); "
            "re-extract or pass allow_stale"
        )
    if manifest.plan_fingerprint != plan_fp:
        raise ManifestError(
            "manifest was extracted for a different plan "
            f"(fingerprint {manifest.plan_fingerprint[:12]}... vs {plan_fp[:12]}...); "
            "re-extract or pass allow_stale"
        )

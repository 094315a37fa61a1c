"""Denoiser backends: the pluggable model contract behind tiled sampling.

Two implementations share one contract: ``predict`` maps a (latent tile, LR
tile, condition, timestep) request to conditional and optional unconditional
prediction fields, and ``decode`` maps the final latent to output space. The
engine performs guidance itself, so backends that cannot produce an
unconditional branch simply return ``e_uncond=None`` and guidance is
skipped.

The toy backend is an analytic stand-in: each condition text names a
point-mass target mean mu_c, and the noise estimate for latent z at schedule
entry (alpha, sigma) is (z - alpha * mu_c) / sigma, pointwise and
position-independent. That makes single-tile and multi-tile runs exactly
comparable and gives every convergence test a closed form.

The remote backend speaks HTTP: a multipart POST with a JSON header part and
raw LVOL tensor parts (chosen for debuggability), JSON responses with
base64 LVOL payloads. Transient failures are retried up to a budget;
concurrent calls are capped by a semaphore.
"""

from __future__ import annotations

import base64
import json
import threading
import time
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import httpx
import numpy as np

from .errors import ContractViolationError, ProtocolError, TransportError
from .geometry import Extent3, plan_tiles
from .schedules import TimestepSchedule
from .volume import (
    LatentVolume,
    crop,
    divide_elementwise,
    from_lvol_bytes,
    paste_accumulate,
    to_lvol_bytes,
)
from .windows import gaussian_window

RETRYABLE_STATUS = (429, 500, 502, 503, 504)


@dataclass(frozen=True)
class DenoiseRequest:
    latent_tile: LatentVolume
    lr_tile: LatentVolume
    condition: str
    timestep: float
    want_uncond: bool = True
    seed: int = 0


@dataclass(frozen=True)
class DenoisePrediction:
    e_cond: LatentVolume
    e_uncond: LatentVolume | None = None


@dataclass(frozen=True)
class ToyModelSpec:
    """Point-mass conditionals: condition text -> target mean.

    Unrecognized conditions (and the unconditional branch) fall back to
    ``default_mean``. The schedule supplies the (alpha, sigma) pair for each
    timestep the model is asked about.
    """

    schedule: TimestepSchedule
    condition_means: Mapping[str, float] = field(default_factory=dict)
    default_mean: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "condition_means", MappingProxyType(dict(self.condition_means)))

    def mean_for(self, condition: str | None) -> float:
        if condition is None:
            return self.default_mean
        return self.condition_means.get(condition, self.default_mean)


class ToyBackend:
    """Analytic epsilon-predictor over point-mass conditionals."""

    kind = "toy"
    scale = 1
    decode_scale = 1

    def __init__(self, spec: ToyModelSpec):
        self.spec = spec

    def predict(self, req: DenoiseRequest) -> DenoisePrediction:
        alpha, sigma = self.spec.schedule.lookup(req.timestep)
        z = req.latent_tile.data
        e_cond = (z - np.float32(alpha * self.spec.mean_for(req.condition))) / np.float32(sigma)
        e_uncond = None
        if req.want_uncond:
            e_uncond = (z - np.float32(alpha * self.spec.default_mean)) / np.float32(sigma)
        return DenoisePrediction(
            e_cond=LatentVolume(e_cond),
            e_uncond=None if e_uncond is None else LatentVolume(e_uncond),
        )

    def decode(self, latent: LatentVolume) -> LatentVolume:
        return latent


class RemoteBackend:
    """HTTP transport for a real denoiser service.

    ``retries`` is the total attempt budget (first try included). The number
    of attempts the last call used is kept on ``last_attempts`` for
    reporting. At most ``max_inflight`` requests are in flight at once.
    """

    kind = "remote"

    def __init__(
        self,
        endpoint: str,
        scale: int = 1,
        timeout: float = 30.0,
        retries: int = 3,
        retry_backoff: float = 0.05,
        max_inflight: int = 4,
        decode_scale: int = 1,
        decode_tile: tuple[int, int, int] | None = None,
        decode_overlap: tuple[int, int, int] = (0, 0, 0),
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.scale = scale
        self.retries = max(1, retries)
        self.retry_backoff = retry_backoff
        self.decode_scale = decode_scale
        self.decode_tile = decode_tile
        self.decode_overlap = decode_overlap
        self.last_attempts = 0
        self._sem = threading.BoundedSemaphore(max(1, max_inflight))
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _post_with_retries(self, url: str, **kwargs) -> httpx.Response:
        attempts = 0
        last_error: str = ""
        while attempts < self.retries:
            attempts += 1
            try:
                response = self._client.post(url, **kwargs)
            except httpx.HTTPError as exc:
                last_error = f"transport failure: {exc}"
            else:
                if response.status_code in RETRYABLE_STATUS:
                    last_error = f"server returned {response.status_code}"
                elif response.status_code != 200:
                    raise ProtocolError(
                        f"{url} answered {response.status_code}: {response.text[:200]}"
                    )
                else:
                    self.last_attempts = attempts
                    return response
            if attempts < self.retries:
                time.sleep(self.retry_backoff * attempts)
        self.last_attempts = attempts
        raise TransportError(
            f"{url} failed after {attempts} attempts: {last_error}", attempts=attempts
        )

    @staticmethod
    def _volume_from_field(payload: dict, name: str) -> LatentVolume:
        encoded = payload.get(name)
        if not isinstance(encoded, str):
            raise ProtocolError(f"response field {name!r} missing or not a string")
        try:
            return from_lvol_bytes(base64.b64decode(encoded))
        except Exception as exc:
            raise ProtocolError(f"response field {name!r} is not a valid LVOL payload: {exc}")

    def predict(self, req: DenoiseRequest) -> DenoisePrediction:
        header = {
            "latent_extent": list(req.latent_tile.data.shape),
            "lr_extent": list(req.lr_tile.data.shape),
            "timestep": req.timestep,
            "condition": req.condition,
            "want_uncond": req.want_uncond,
            "seed": req.seed,
        }
        files = {
            "header": (None, json.dumps(header), "application/json"),
            "latent": ("latent.lvol", to_lvol_bytes(req.latent_tile), "application/octet-stream"),
            "lr": ("lr.lvol", to_lvol_bytes(req.lr_tile), "application/octet-stream"),
        }
        with self._sem:
            response = self._post_with_retries(self.endpoint + "/denoise", files=files)
        try:
            payload = response.json()
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"denoise response is not JSON: {exc}")
        e_cond = self._volume_from_field(payload, "e_cond")
        e_uncond = None
        if req.want_uncond and payload.get("e_uncond") is not None:
            e_uncond = self._volume_from_field(payload, "e_uncond")
        expected = req.latent_tile.data.shape
        for name, vol in (("e_cond", e_cond), ("e_uncond", e_uncond)):
            if vol is not None and vol.data.shape != expected:
                raise ContractViolationError(
                    f"backend returned {name} with shape {vol.data.shape}, "
                    f"expected {expected}"
                )
        return DenoisePrediction(e_cond=e_cond, e_uncond=e_uncond)

    def _decode_call(self, latent: LatentVolume) -> LatentVolume:
        files = {
            "header": (None, json.dumps({"extent": list(latent.data.shape)}), "application/json"),
            "latent": ("latent.lvol", to_lvol_bytes(latent), "application/octet-stream"),
        }
        with self._sem:
            response = self._post_with_retries(self.endpoint + "/decode", files=files)
        try:
            payload = response.json()
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"decode response is not JSON: {exc}")
        decoded = self._volume_from_field(payload, "decoded")
        t, h, w, _ = latent.data.shape
        expected_spatial = (t, h * self.decode_scale, w * self.decode_scale)
        if decoded.data.shape[:3] != expected_spatial:
            raise ContractViolationError(
                f"decoded tile has spatial shape {decoded.data.shape[:3]}, "
                f"expected {expected_spatial}"
            )
        return decoded

    def decode(self, latent: LatentVolume) -> LatentVolume:
        """Decode the final latent, tiling the calls when configured.

        Large latents are decoded per tile and re-assembled with the same
        Gaussian-blend aggregation used during sampling, since real decoders
        hit the same memory wall as the denoiser.
        """
        if self.decode_tile is None:
            return self._decode_call(latent)
        plan = plan_tiles(latent.extent, Extent3(*self.decode_tile), self.decode_overlap)
        out_extent = Extent3(
            latent.extent.t,
            latent.extent.h * self.decode_scale,
            latent.extent.w * self.decode_scale,
        )
        first = None
        acc = None
        weight_acc = None
        window = None
        for region in plan.regions:
            decoded = self._decode_call(crop(latent, region))
            if first is None:
                first = decoded
                acc = LatentVolume.zeros(out_extent, decoded.channels, dtype=np.float64)
                weight_acc = LatentVolume.zeros(out_extent, 1, dtype=np.float64)
                window = gaussian_window(decoded.extent)
            out_region = region.scaled(self.decode_scale)
            paste_accumulate(acc, decoded, out_region, window)
            paste_accumulate(
                weight_acc,
                LatentVolume.full(decoded.extent, 1, 1.0),
                out_region,
                window,
            )
        return divide_elementwise(acc, weight_acc)

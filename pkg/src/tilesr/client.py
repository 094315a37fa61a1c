"""Thin client for the engine service.

With a base URL the client speaks plain HTTP. Without one it runs the
service in-process behind an ASGI transport (same routes, same payloads,
no socket), so the CLI works standalone while staying a pure API client.
"""

from __future__ import annotations

import asyncio
from typing import Any

import httpx

from .errors import TilesrError, TransportError

_CATEGORY_EXIT_CODES = {
    "usage": 1,
    "config": 2,
    "extraction": 3,
    "backend": 4,
    "internal": 5,
}


class ServiceError(TilesrError):
    """An error reported by the service, carrying its category."""

    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category
        self.exit_code = _CATEGORY_EXIT_CODES.get(category, 5)


class EngineClient:
    def __init__(self, base_url: str | None = None, timeout: float = 600.0):
        self._base_url = base_url
        self._timeout = timeout
        self._app = None
        if base_url is None:
            from .service.app import create_app

            self._app = create_app()

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        if self._base_url is not None:
            try:
                with httpx.Client(base_url=self._base_url, timeout=self._timeout) as client:
                    response = client.request(method, path, json=payload)
            except httpx.HTTPError as exc:
                raise TransportError(f"engine service unreachable: {exc}")
        else:
            response = asyncio.run(self._arequest(method, path, payload))
        return self._unwrap(response)

    async def _arequest(self, method: str, path: str, payload: dict | None) -> httpx.Response:
        transport = httpx.ASGITransport(app=self._app)
        async with httpx.AsyncClient(
            transport=transport, base_url="http://tilesr.local", timeout=self._timeout
        ) as client:
            return await client.request(method, path, json=payload)

    @staticmethod
    def _unwrap(response: httpx.Response) -> dict:
        try:
            body = response.json()
        except ValueError:
            raise ServiceError("internal", f"service answered {response.status_code} with non-JSON body")
        if response.status_code != 200:
            error = body.get("error") if isinstance(body, dict) else None
            if isinstance(error, dict) and "category" in error:
                raise ServiceError(error["category"], error.get("message", "unknown error"))
            raise ServiceError("internal", f"service answered {response.status_code}: {body}")
        return body

    @staticmethod
    def _envelope(config_toml: str | None, overrides: dict[str, Any] | None) -> dict:
        return {
            "config_toml": config_toml,
            "config": None,
            "overrides": {k: v for k, v in (overrides or {}).items() if v is not None},
        }

    def health(self) -> dict:
        return self._request("GET", "/v1/health")

    def plan(self, config_toml: str, overrides: dict | None = None) -> dict:
        return self._request("POST", "/v1/plan", self._envelope(config_toml, overrides))

    def extract(self, config_toml: str, overrides: dict | None = None) -> dict:
        return self._request("POST", "/v1/prompts", self._envelope(config_toml, overrides))

    def run(self, config_toml: str, overrides: dict | None = None) -> dict:
        return self._request("POST", "/v1/run", self._envelope(config_toml, overrides))

    def diagnose(self, config_toml: str, overrides: dict | None = None) -> dict:
        return self._request("POST", "/v1/diagnose", self._envelope(config_toml, overrides))

    def bench(self, config_toml: str, overrides: dict | None = None) -> dict:
        return self._request("POST", "/v1/bench", self._envelope(config_toml, overrides))

"""FastAPI service wrapping the engine.

One run executes at a time per process instance (a lock serializes the
heavy commands); concurrency below that, such as tile fan-out and
extraction fan-out, is governed by the config. Engine errors map to a JSON error body carrying
the category a thin client turns into an exit code.
"""

from __future__ import annotations

import os
import threading

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import RunConfig, load_config
from ..errors import TilesrError, UsageError
from ..pipeline import (
    execute_bench,
    execute_diagnose,
    execute_extract,
    execute_plan,
    execute_run,
)
from . import schemas

_STATUS_BY_CATEGORY = {
    "usage": 400,
    "config": 400,
    "extraction": 502,
    "backend": 502,
    "internal": 500,
}

_run_lock = threading.Lock()


def _resolve_config(envelope: schemas.ConfigEnvelope) -> RunConfig:
    if envelope.config_toml is None and envelope.config is None:
        raise UsageError("request needs config_toml or config")
    source = envelope.config_toml if envelope.config_toml is not None else envelope.config
    return load_config(source, envelope.overrides, env=os.environ)


def create_app() -> FastAPI:
    app = FastAPI(title="tilesr", version=__version__)

    @app.exception_handler(TilesrError)
    async def _engine_error(_request: Request, exc: TilesrError) -> JSONResponse:
        body = schemas.ErrorResponse(
            error=schemas.ErrorDetail(category=exc.category, message=str(exc))
        )
        return JSONResponse(
            status_code=_STATUS_BY_CATEGORY.get(exc.category, 500),
            content=body.model_dump(),
        )

    @app.get("/v1/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/v1/plan", response_model=schemas.PlanResponse)
    def plan(envelope: schemas.ConfigEnvelope) -> schemas.PlanResponse:
        cfg = _resolve_config(envelope)
        outcome = execute_plan(cfg)
        payload = outcome.plan.to_dict()
        return schemas.PlanResponse(**payload, listing=outcome.listing)

    @app.post("/v1/prompts", response_model=schemas.ExtractResponse)
    def extract(envelope: schemas.ConfigEnvelope) -> schemas.ExtractResponse:
        cfg = _resolve_config(envelope)
        with _run_lock:
            outcome = execute_extract(cfg)
        return schemas.ExtractResponse(
            manifest=schemas.ManifestModel(**outcome.manifest.to_dict()),
            path=outcome.path,
        )

    @app.post("/v1/run", response_model=schemas.RunResponse)
    def run(envelope: schemas.ConfigEnvelope) -> schemas.RunResponse:
        cfg = _resolve_config(envelope)
        with _run_lock:
            outcome = execute_run(cfg)
        return schemas.RunResponse(
            report=schemas.RunReportModel(**outcome.report.to_dict()),
            output_path=outcome.output_path,
            raw_path=outcome.raw_path,
            report_path=outcome.report_path,
        )

    @app.post("/v1/diagnose", response_model=schemas.DiagnoseResponse)
    def diagnose(envelope: schemas.ConfigEnvelope) -> schemas.DiagnoseResponse:
        cfg = _resolve_config(envelope)
        with _run_lock:
            outcome = execute_diagnose(cfg)
        return schemas.DiagnoseResponse(
            csv=outcome.csv_text,
            reports=[
                schemas.MisguidanceRowModel(
                    tile_index=r.tile_index,
                    timestep=r.timestep,
                    delta_norm=r.delta_norm,
                    guidance_norm=r.guidance_norm,
                    reference_condition=r.reference_condition,
                )
                for r in outcome.reports
            ],
            seams=[schemas.SeamModel(**s) for s in outcome.seams],
        )

    @app.post("/v1/bench", response_model=schemas.BenchResponse)
    def bench(envelope: schemas.ConfigEnvelope) -> schemas.BenchResponse:
        cfg = _resolve_config(envelope)
        with _run_lock:
            outcome = execute_bench(cfg)
        return schemas.BenchResponse(
            rows=[schemas.BenchRowModel(**row) for row in outcome.rows],
            overhead_ratio=outcome.overhead_ratio,
            table=outcome.table,
        )

    return app


app = create_app()

"""Command-line front end: a thin client over the engine service.

Commands talk to ``--server`` (or TILESR_SERVER) when given, otherwise to an
in-process instance of the same service. Exit codes: 1 usage, 2 config,
3 extraction, 4 backend, 5 internal.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .client import EngineClient, ServiceError
from .errors import TilesrError


def _read_config(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise click.UsageError(f"cannot read config file: {exc}")


def _client(ctx: click.Context) -> EngineClient:
    return EngineClient(base_url=ctx.obj.get("server"))


@click.group()
@click.option(
    "--server",
    envvar="TILESR_SERVER",
    default=None,
    help="Engine service URL; omit to run the service in-process.",
)
@click.pass_context
def cli(ctx: click.Context, server: str | None) -> None:
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@cli.command()
@click.option("--config", "-c", "config_path", required=True, help="TOML config file.")
@click.option("--json", "as_json", is_flag=True, help="Print the plan as JSON.")
@click.pass_context
def plan(ctx: click.Context, config_path: str, as_json: bool) -> None:
    """Print the tiling plan for the configured input."""
    result = _client(ctx).plan(_read_config(config_path))
    if as_json:
        result.pop("listing", None)
        click.echo(json.dumps(result, indent=2))
    else:
        click.echo(result["listing"])


@cli.command("extract-prompts")
@click.option("--config", "-c", "config_path", required=True, help="TOML config file.")
@click.option(
    "--mode",
    type=click.Choice(["global", "local", "global+local"]),
    default=None,
    help="Prompt mode override.",
)
@click.option("--output", "-o", "output_path", default=None, help="Manifest file to write.")
@click.option("--seed", type=int, default=None, help="Seed override.")
@click.pass_context
def extract_prompts(
    ctx: click.Context,
    config_path: str,
    mode: str | None,
    output_path: str | None,
    seed: int | None,
) -> None:
    """Extract per-tile prompts into a fingerprinted manifest."""
    overrides = {"extractor.mode": mode, "output.manifest": output_path, "seed": seed}
    result = _client(ctx).extract(_read_config(config_path), overrides)
    if result["path"]:
        click.echo(
            f"wrote manifest with {len(result['manifest']['records'])} records to {result['path']}"
        )
    else:
        click.echo(json.dumps(result["manifest"], indent=2))


@cli.command()
@click.option("--config", "-c", "config_path", required=True, help="TOML config file.")
@click.option("--prompts", "prompts_path", default=None, help="Reuse a prompt manifest.")
@click.option(
    "--mode",
    type=click.Choice(["global", "local", "global+local"]),
    default=None,
    help="Prompt mode override.",
)
@click.option("--seed", type=int, default=None, help="Seed override.")
@click.option(
    "--backend",
    "backend_kind",
    type=click.Choice(["toy", "remote"]),
    default=None,
    help="Backend override.",
)
@click.option("--input", "input_path", default=None, help="Input override (image/frame dir/.lvol).")
@click.option("--output", "output_path", default=None, help="Media output override.")
@click.option("--output-raw", "raw_path", default=None, help="Raw LVOL output override.")
@click.option("--report", "report_path", default=None, help="Run report JSON path.")
@click.option("--parallelism", type=int, default=None, help="Concurrent tile predictions.")
@click.option("--allow-stale", is_flag=True, default=False, help="Skip manifest fingerprint checks.")
@click.pass_context
def run(
    ctx: click.Context,
    config_path: str,
    prompts_path: str | None,
    mode: str | None,
    seed: int | None,
    backend_kind: str | None,
    input_path: str | None,
    output_path: str | None,
    raw_path: str | None,
    report_path: str | None,
    parallelism: int | None,
    allow_stale: bool,
) -> None:
    """Run tiled super-resolution end to end."""
    overrides = {
        "prompts.path": prompts_path,
        "extractor.mode": mode,
        "seed": seed,
        "backend.kind": backend_kind,
        "input.path": input_path,
        "output.path": output_path,
        "output.raw": raw_path,
        "output.report": report_path,
        "parallelism": parallelism,
        "prompts.allow_stale": True if allow_stale else None,
    }
    result = _client(ctx).run(_read_config(config_path), overrides)
    report = result["report"]
    click.echo(
        f"run complete: {report['tile_count']} tiles x {report['steps']} steps, "
        f"mode {report['mode']}, config {report['config_hash']}"
    )
    for path, checksum in report["output_checksums"].items():
        click.echo(f"  {path}  sha256 {checksum}")
    if result["report_path"]:
        click.echo(f"  report written to {result['report_path']}")


@cli.command()
@click.option("--config", "-c", "config_path", required=True, help="TOML config file.")
@click.option("--prompts", "prompts_path", default=None, help="Reuse a prompt manifest.")
@click.option(
    "--mode",
    type=click.Choice(["global", "local", "global+local"]),
    default=None,
    help="Prompt mode override.",
)
@click.option("--seed", type=int, default=None, help="Seed override.")
@click.option("--output", "-o", "csv_path", default=None, help="Write the CSV here instead of stdout.")
@click.pass_context
def diagnose(
    ctx: click.Context,
    config_path: str,
    prompts_path: str | None,
    mode: str | None,
    seed: int | None,
    csv_path: str | None,
) -> None:
    """Measure per-tile prompt misguidance along the sampling trajectory."""
    overrides = {
        "prompts.path": prompts_path,
        "extractor.mode": mode,
        "seed": seed,
    }
    result = _client(ctx).diagnose(_read_config(config_path), overrides)
    if csv_path:
        Path(csv_path).write_text(result["csv"], encoding="utf-8")
        click.echo(f"wrote {len(result['reports'])} rows to {csv_path}")
    else:
        click.echo(result["csv"], nl=False)
    for seam in result["seams"]:
        state = "monotone" if seam["monotone"] else "NON-MONOTONE"
        click.echo(
            f"seam tiles {seam['tiles']} axis {seam['axis']} band {seam['band']}: "
            f"{state}, range [{seam['min']:.4g}, {seam['max']:.4g}]"
        )


@cli.command()
@click.option("--config", "-c", "config_path", required=True, help="TOML config file.")
@click.option("--report", "report_path", default=None, help="Write bench rows as JSON here.")
@click.pass_context
def bench(ctx: click.Context, config_path: str, report_path: str | None) -> None:
    """Time a baseline run against a tiled-prompt run."""
    result = _client(ctx).bench(_read_config(config_path))
    click.echo(result["table"])
    if report_path:
        Path(report_path).write_text(
            json.dumps(
                {"rows": result["rows"], "overhead_ratio": result["overhead_ratio"]}, indent=2
            )
            + "\n",
            encoding="utf-8",
        )
        click.echo(f"rows written to {report_path}")


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8601, show_default=True)
def serve(host: str, port: int) -> None:
    """Start the engine service."""
    import uvicorn

    uvicorn.run("tilesr.service.app:app", host=host, port=port)


def main() -> None:
    try:
        cli(standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except click.exceptions.Abort:
        sys.exit(1)
    except ServiceError as exc:
        click.echo(f"{exc.category} error: {exc}", err=True)
        sys.exit(exc.exit_code)
    except TilesrError as exc:
        click.echo(f"{exc.category} error: {exc}", err=True)
        sys.exit(exc.exit_code)


if __name__ == "__main__":
    main()

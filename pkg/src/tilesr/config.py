"""Run configuration: TOML sections, strict validation, canonical hashing.

A config is validated before any work happens; unknown keys are errors so a
typo cannot silently fall back to a default. Resolution order is config file
< environment overrides < explicit overrides (CLI flags / request fields).
The config hash is computed over the fully resolved, canonicalized content,
so (hash, seed) pins a run's output.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError

ENV_OVERRIDES = {
    "TILESR_BACKEND_ENDPOINT": "backend.endpoint",
    "TILESR_EXTRACTOR_ENDPOINT": "extractor.endpoint",
    "TILESR_SEED": "seed",
}

PROMPT_MODES = ("global", "local", "global+local")


def _want_int(value: Any, key: str) -> int:
    if isinstance(value, bool):
        raise ConfigError(f"{key} must be an integer, got a boolean")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value)
        except ValueError:
            pass
    raise ConfigError(f"{key} must be an integer, got {value!r}")


def _want_float(value: Any, key: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"{key} must be a number, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            pass
    raise ConfigError(f"{key} must be a number, got {value!r}")


def _want_bool(value: Any, key: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("true", "false"):
        return value.lower() == "true"
    raise ConfigError(f"{key} must be a boolean, got {value!r}")


def _want_str(value: Any, key: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def _want_int3(value: Any, key: str) -> tuple[int, int, int]:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ConfigError(f"{key} must be a 3-element list [t, h, w], got {value!r}")
    return tuple(_want_int(v, f"{key}[{i}]") for i, v in enumerate(value))


def _want_choice(value: Any, key: str, choices: tuple[str, ...]) -> str:
    value = _want_str(value, key)
    if value not in choices:
        raise ConfigError(f"{key} must be one of {choices}, got {value!r}")
    return value


@dataclass
class InputCfg:
    path: str = ""
    kind: str = ""  # "", "image", "video", "raw" ("" = detect from path)


@dataclass
class PlanCfg:
    kind: str = "image"  # "image" | "video"
    tile: tuple[int, int, int] | None = None
    overlap: tuple[int, int, int] = (0, 0, 0)
    mode: str = ""  # "" = gaussian_blend for images, valid_region for video
    valid_margin: tuple[int, int, int] | None = None


@dataclass
class WindowCfg:
    kind: str = ""  # "" = follow plan mode
    sigma_frac: float = 0.33


@dataclass
class GuidanceCfg:
    enabled: bool = True
    scale: float = 1.0


@dataclass
class ScheduleCfg:
    steps: int = 50
    theta_max: float = 1.55


@dataclass
class ToyCfg:
    default_mean: float = 0.0
    condition_means: dict[str, float] = field(default_factory=dict)


@dataclass
class BackendCfg:
    kind: str = "toy"  # "toy" | "remote"
    scale: int = 1
    latent_channels: int = 0  # 0 = match the input
    pre_upsample: bool = False
    endpoint: str = ""
    timeout: float = 30.0
    retries: int = 3
    retry_backoff: float = 0.05
    max_inflight: int = 4
    decode_scale: int = 1
    decode_tile: tuple[int, int, int] | None = None
    decode_overlap: tuple[int, int, int] = (0, 0, 0)
    toy: ToyCfg = field(default_factory=ToyCfg)


@dataclass
class ExtractorCfg:
    kind: str = "stub"  # "stub" | "vision-chat"
    mode: str = "local"
    endpoint: str = ""
    model: str = "default"
    temperature: float = 0.0
    frame_budget: int = 16
    crop_only: bool = False
    caption_path: str = "choices.0.message.content"
    timeout: float = 30.0
    retries: int = 3
    max_inflight: int = 4


@dataclass
class PromptsCfg:
    path: str = ""
    allow_stale: bool = False


@dataclass
class OutputCfg:
    path: str = ""
    raw: str = ""
    report: str = ""
    manifest: str = ""


@dataclass
class RunConfig:
    seed: int = 0
    parallelism: int = 1
    input: InputCfg = field(default_factory=InputCfg)
    plan: PlanCfg = field(default_factory=PlanCfg)
    window: WindowCfg = field(default_factory=WindowCfg)
    guidance: GuidanceCfg = field(default_factory=GuidanceCfg)
    schedule: ScheduleCfg = field(default_factory=ScheduleCfg)
    backend: BackendCfg = field(default_factory=BackendCfg)
    extractor: ExtractorCfg = field(default_factory=ExtractorCfg)
    prompts: PromptsCfg = field(default_factory=PromptsCfg)
    output: OutputCfg = field(default_factory=OutputCfg)

    def canonical_dict(self) -> dict:
        def encode(value):
            if isinstance(value, tuple):
                return [encode(v) for v in value]
            if isinstance(value, dict):
                return {k: encode(v) for k, v in sorted(value.items())}
            if hasattr(value, "__dataclass_fields__"):
                return {
                    name: encode(getattr(value, name))
                    for name in sorted(value.__dataclass_fields__)
                }
            return value

        return encode(self)

    def config_hash(self) -> str:
        canonical = json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _set_dotted(raw: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = raw
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override {dotted}: {key} is not a section")
    node[keys[-1]] = value


def _parse_section(raw: Any, key: str) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{key} must be a section (TOML table)")
    return dict(raw)


def _reject_unknown(section: dict, key: str) -> None:
    if section:
        unknown = sorted(section)[0]
        raise ConfigError(f"unknown config key {key}.{unknown}" if key else f"unknown config key {unknown}")


def _build(raw: dict) -> RunConfig:
    raw = copy.deepcopy(raw)
    cfg = RunConfig()

    if "seed" in raw:
        cfg.seed = _want_int(raw.pop("seed"), "seed")
    if "parallelism" in raw:
        cfg.parallelism = _want_int(raw.pop("parallelism"), "parallelism")
        if cfg.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")

    section = _parse_section(raw.pop("input", None), "input")
    if "path" in section:
        cfg.input.path = _want_str(section.pop("path"), "input.path")
    if "kind" in section:
        cfg.input.kind = _want_choice(section.pop("kind"), "input.kind", ("image", "video", "raw"))
    _reject_unknown(section, "input")

    section = _parse_section(raw.pop("plan", None), "plan")
    if "kind" in section:
        cfg.plan.kind = _want_choice(section.pop("kind"), "plan.kind", ("image", "video"))
    if "tile" in section:
        tile = _want_int3(section.pop("tile"), "plan.tile")
        if any(v < 0 for v in tile):
            raise ConfigError("plan.tile entries must be >= 0")
        cfg.plan.tile = tile
    if "overlap" in section:
        overlap = _want_int3(section.pop("overlap"), "plan.overlap")
        if any(v < 0 for v in overlap):
            raise ConfigError("plan.overlap entries must be >= 0")
        cfg.plan.overlap = overlap
    if "mode" in section:
        cfg.plan.mode = _want_choice(
            section.pop("mode"), "plan.mode", ("gaussian_blend", "valid_region")
        )
    if "valid_margin" in section:
        cfg.plan.valid_margin = _want_int3(section.pop("valid_margin"), "plan.valid_margin")
    _reject_unknown(section, "plan")

    section = _parse_section(raw.pop("window", None), "window")
    if "kind" in section:
        cfg.window.kind = _want_choice(section.pop("kind"), "window.kind", ("gaussian", "valid_mask"))
    if "sigma_frac" in section:
        cfg.window.sigma_frac = _want_float(section.pop("sigma_frac"), "window.sigma_frac")
        if not 0.0 < cfg.window.sigma_frac <= 1.0:
            raise ConfigError("window.sigma_frac must be in (0, 1]")
    _reject_unknown(section, "window")

    section = _parse_section(raw.pop("guidance", None), "guidance")
    if "enabled" in section:
        cfg.guidance.enabled = _want_bool(section.pop("enabled"), "guidance.enabled")
    if "scale" in section:
        cfg.guidance.scale = _want_float(section.pop("scale"), "guidance.scale")
        if cfg.guidance.scale < 0:
            raise ConfigError("guidance.scale must be >= 0")
    _reject_unknown(section, "guidance")

    section = _parse_section(raw.pop("schedule", None), "schedule")
    if "steps" in section:
        cfg.schedule.steps = _want_int(section.pop("steps"), "schedule.steps")
        if cfg.schedule.steps < 1:
            raise ConfigError("schedule.steps must be >= 1")
    if "theta_max" in section:
        cfg.schedule.theta_max = _want_float(section.pop("theta_max"), "schedule.theta_max")
    _reject_unknown(section, "schedule")

    section = _parse_section(raw.pop("backend", None), "backend")
    if "kind" in section:
        cfg.backend.kind = _want_choice(section.pop("kind"), "backend.kind", ("toy", "remote"))
    if "scale" in section:
        cfg.backend.scale = _want_int(section.pop("scale"), "backend.scale")
        if cfg.backend.scale < 1:
            raise ConfigError("backend.scale must be >= 1")
    if "latent_channels" in section:
        cfg.backend.latent_channels = _want_int(section.pop("latent_channels"), "backend.latent_channels")
        if cfg.backend.latent_channels < 0:
            raise ConfigError("backend.latent_channels must be >= 0")
    if "pre_upsample" in section:
        cfg.backend.pre_upsample = _want_bool(section.pop("pre_upsample"), "backend.pre_upsample")
    if "endpoint" in section:
        cfg.backend.endpoint = _want_str(section.pop("endpoint"), "backend.endpoint")
    if "timeout" in section:
        cfg.backend.timeout = _want_float(section.pop("timeout"), "backend.timeout")
    if "retries" in section:
        cfg.backend.retries = _want_int(section.pop("retries"), "backend.retries")
        if cfg.backend.retries < 1:
            raise ConfigError("backend.retries must be >= 1")
    if "retry_backoff" in section:
        cfg.backend.retry_backoff = _want_float(section.pop("retry_backoff"), "backend.retry_backoff")
    if "max_inflight" in section:
        cfg.backend.max_inflight = _want_int(section.pop("max_inflight"), "backend.max_inflight")
        if cfg.backend.max_inflight < 1:
            raise ConfigError("backend.max_inflight must be >= 1")
    if "decode_scale" in section:
        cfg.backend.decode_scale = _want_int(section.pop("decode_scale"), "backend.decode_scale")
        if cfg.backend.decode_scale < 1:
            raise ConfigError("backend.decode_scale must be >= 1")
    if "decode_tile" in section:
        cfg.backend.decode_tile = _want_int3(section.pop("decode_tile"), "backend.decode_tile")
    if "decode_overlap" in section:
        cfg.backend.decode_overlap = _want_int3(section.pop("decode_overlap"), "backend.decode_overlap")
    toy_section = _parse_section(section.pop("toy", None), "backend.toy")
    if "default_mean" in toy_section:
        cfg.backend.toy.default_mean = _want_float(toy_section.pop("default_mean"), "backend.toy.default_mean")
    if "condition_means" in toy_section:
        means = toy_section.pop("condition_means")
        if not isinstance(means, dict):
            raise ConfigError("backend.toy.condition_means must be a table of text = mean")
        cfg.backend.toy.condition_means = {
            _want_str(k, "backend.toy.condition_means key"): _want_float(
                v, f"backend.toy.condition_means[{k!r}]"
            )
            for k, v in means.items()
        }
    _reject_unknown(toy_section, "backend.toy")
    _reject_unknown(section, "backend")

    section = _parse_section(raw.pop("extractor", None), "extractor")
    if "kind" in section:
        cfg.extractor.kind = _want_choice(section.pop("kind"), "extractor.kind", ("stub", "vision-chat"))
    if "mode" in section:
        cfg.extractor.mode = _want_choice(section.pop("mode"), "extractor.mode", PROMPT_MODES)
    if "endpoint" in section:
        cfg.extractor.endpoint = _want_str(section.pop("endpoint"), "extractor.endpoint")
    if "model" in section:
        cfg.extractor.model = _want_str(section.pop("model"), "extractor.model")
    if "temperature" in section:
        cfg.extractor.temperature = _want_float(section.pop("temperature"), "extractor.temperature")
    if "frame_budget" in section:
        cfg.extractor.frame_budget = _want_int(section.pop("frame_budget"), "extractor.frame_budget")
        if cfg.extractor.frame_budget < 1:
            raise ConfigError("extractor.frame_budget must be >= 1")
    if "crop_only" in section:
        cfg.extractor.crop_only = _want_bool(section.pop("crop_only"), "extractor.crop_only")
    if "caption_path" in section:
        cfg.extractor.caption_path = _want_str(section.pop("caption_path"), "extractor.caption_path")
    if "timeout" in section:
        cfg.extractor.timeout = _want_float(section.pop("timeout"), "extractor.timeout")
    if "retries" in section:
        cfg.extractor.retries = _want_int(section.pop("retries"), "extractor.retries")
        if cfg.extractor.retries < 1:
            raise ConfigError("extractor.retries must be >= 1")
    if "max_inflight" in section:
        cfg.extractor.max_inflight = _want_int(section.pop("max_inflight"), "extractor.max_inflight")
        if cfg.extractor.max_inflight < 1:
            raise ConfigError("extractor.max_inflight must be >= 1")
    _reject_unknown(section, "extractor")

    section = _parse_section(raw.pop("prompts", None), "prompts")
    if "path" in section:
        cfg.prompts.path = _want_str(section.pop("path"), "prompts.path")
    if "allow_stale" in section:
        cfg.prompts.allow_stale = _want_bool(section.pop("allow_stale"), "prompts.allow_stale")
    _reject_unknown(section, "prompts")

    section = _parse_section(raw.pop("output", None), "output")
    for name in ("path", "raw", "report", "manifest"):
        if name in section:
            setattr(cfg.output, name, _want_str(section.pop(name), f"output.{name}"))
    _reject_unknown(section, "output")

    _reject_unknown(raw, "")
    return cfg


def load_config(
    source: str | Mapping[str, Any] | None,
    overrides: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    """Build a validated RunConfig from TOML text or a raw mapping.

    ``overrides`` maps dotted keys (e.g. ``backend.kind``) to values and
    wins over both the file and the environment.
    """
    if source is None:
        raw: dict = {}
    elif isinstance(source, str):
        try:
            raw = tomllib.loads(source)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config is not valid TOML: {exc}")
    else:
        raw = dict(copy.deepcopy(source))
    if env is not None:
        for var, dotted in ENV_OVERRIDES.items():
            if var in env and env[var] != "":
                _set_dotted(raw, dotted, env[var])
    if overrides:
        for dotted, value in overrides.items():
            if value is not None:
                _set_dotted(raw, dotted, value)
    return _build(raw)


def load_config_file(
    path: str,
    overrides: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}")
    return load_config(text, overrides, env)

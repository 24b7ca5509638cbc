"""TOML configuration: thresholds, ingest gates, backends, and roots.

A configuration file is optional — every field has a default — and
strictly checked: unknown keys or malformed values are errors, not
warnings, so a typo cannot silently run with defaults.  ``--set``-style
dotted overrides apply on top of the file.  The configuration digest
recorded in each video's manifest is a hash of the fully resolved
values, making it visible when annotation settings change mid-project.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - version-dependent import
    import tomli as tomllib

from .agents import AgentSuite, ChatClient, load_taxonomy
from .backends import Gateway, BackendSpec
from .errors import BackendError, ConfigError
from .sdr import SdrConfig

__all__ = [
    "AgentSettings",
    "Config",
    "IngestSettings",
    "PipelineSettings",
    "apply_overrides",
    "config_digest",
    "load_config",
    "make_gateway",
    "make_suite",
    "sdr_config",
]


@dataclass(frozen=True)
class PipelineSettings:
    coverage_threshold: float = 0.9
    match_threshold: float = 0.5
    pad_fraction: float = 0.25
    min_blank_fraction: float = 0.0005
    shift_fraction: float = 0.01
    count_stuff_toward_coverage: bool = True
    refine: bool = True
    patch_width: int = 0  # 0 uses the frame height
    stride: int = 0  # 0 uses half the patch width

    def __post_init__(self) -> None:
        if not 0.0 < self.coverage_threshold < 1.0:
            raise ConfigError("coverage_threshold must be between 0 and 1")
        if not 0.0 <= self.match_threshold < 1.0:
            raise ConfigError("match_threshold must be in [0, 1)")
        if not 0.0 < self.pad_fraction <= 1.0:
            raise ConfigError("pad_fraction must be in (0, 1]")
        if not 0.0 <= self.min_blank_fraction < 1.0:
            raise ConfigError("min_blank_fraction must be in [0, 1)")
        if not 0.0 < self.shift_fraction < 1.0:
            raise ConfigError("shift_fraction must be in (0, 1)")
        if self.patch_width < 0 or self.stride < 0:
            raise ConfigError("patch_width and stride must be non-negative")


@dataclass(frozen=True)
class IngestSettings:
    width: int = 2048
    height: int = 1024
    min_seconds: float = 5.0
    max_seconds: float = 30.0
    default_fps: float = 10.0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ConfigError("ingest dimensions must be positive")
        if not 0.0 < self.min_seconds < self.max_seconds:
            raise ConfigError("need 0 < min_seconds < max_seconds")
        if not self.default_fps > 0:
            raise ConfigError("default_fps must be positive")


@dataclass(frozen=True)
class AgentSettings:
    url: str = "mock:rules"
    timeout: float = 120.0
    prompts_dir: str = ""  # empty uses the packaged templates
    taxonomy: str = ""  # empty uses the packaged taxonomy

    def __post_init__(self) -> None:
        if not self.timeout > 0:
            raise ConfigError("agent timeout must be positive")


@dataclass(frozen=True)
class Config:
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    ingest: IngestSettings = field(default_factory=IngestSettings)
    agents: AgentSettings = field(default_factory=AgentSettings)
    store_root: str = "store"
    frames_root: str = "frames"
    backends: tuple[BackendSpec, ...] = ()


_SECTION_TYPES = {
    "pipeline": PipelineSettings,
    "ingest": IngestSettings,
    "agents": AgentSettings,
}

_TOP_SCALARS = {"store_root": str, "frames_root": str}


def _check_scalar(section: str, key: str, value, want: type):
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
        return value
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key} must be true or false, got {value!r}")
        return value
    if not isinstance(value, str):
        raise ConfigError(f"{section}.{key} must be a string, got {value!r}")
    return value


def _section_from_dict(section: str, cls, data: dict):
    allowed = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {section}.{key}")
        want = {"float": float, "int": int, "bool": bool, "str": str}[allowed[key]]
        kwargs[key] = _check_scalar(section, key, value, want)
    return cls(**kwargs)


def _backend_from_dict(index: int, data: dict) -> BackendSpec:
    allowed = {"id": str, "role": str, "url": str, "taxonomy": str}
    kwargs = {}
    for key, value in data.items():
        if key not in allowed:
            raise ConfigError(f"unknown key backends[{index}].{key}")
        kwargs[key] = _check_scalar(f"backends[{index}]", key, value, allowed[key])
    for required in ("id", "role", "url"):
        if required not in kwargs:
            raise ConfigError(f"backends[{index}] is missing {required!r}")
    try:
        return BackendSpec(
            id=kwargs["id"],
            role=kwargs["role"],
            url=kwargs["url"],
            taxonomy=kwargs.get("taxonomy", "none"),
        )
    except BackendError as exc:
        raise ConfigError(f"backends[{index}]: {exc}") from exc


def load_config(path: str | Path | None = None) -> Config:
    """Parse a TOML configuration file; ``None`` yields the defaults."""

    if path is None:
        return Config()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    sections: dict = {}
    top: dict = {}
    backends: list[BackendSpec] = []
    for key, value in data.items():
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be a table")
            sections[key] = _section_from_dict(key, _SECTION_TYPES[key], value)
        elif key in _TOP_SCALARS:
            top[key] = _check_scalar("", key, value, _TOP_SCALARS[key])
        elif key == "backends":
            if not isinstance(value, list):
                raise ConfigError("backends must be an array of tables")
            for i, item in enumerate(value):
                if not isinstance(item, dict):
                    raise ConfigError(f"backends[{i}] must be a table")
                backends.append(_backend_from_dict(i, item))
        else:
            raise ConfigError(f"unknown key {key}")
    seen = set()
    for spec in backends:
        if spec.id in seen:
            raise ConfigError(f"duplicate backend id {spec.id!r}")
        seen.add(spec.id)
    return Config(
        pipeline=sections.get("pipeline", PipelineSettings()),
        ingest=sections.get("ingest", IngestSettings()),
        agents=sections.get("agents", AgentSettings()),
        backends=tuple(backends),
        **top,
    )


def apply_overrides(config: Config, overrides: list[str]) -> Config:
    """Apply ``section.key=value`` strings on top of a configuration."""

    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) == 1 and parts[0] in _TOP_SCALARS:
            config = replace(config, **{parts[0]: raw})
            continue
        if len(parts) != 2 or parts[0] not in _SECTION_TYPES:
            raise ConfigError(f"unknown override key {dotted!r}")
        section_name, key = parts
        section = getattr(config, section_name)
        allowed = {f.name: f.type for f in fields(type(section))}
        if key not in allowed:
            raise ConfigError(f"unknown override key {dotted!r}")
        want = {"float": float, "int": int, "bool": bool, "str": str}[allowed[key]]
        if want is bool:
            if raw not in ("true", "false"):
                raise ConfigError(f"{dotted} must be true or false, got {raw!r}")
            value = raw == "true"
        elif want is int:
            try:
                value = int(raw)
            except ValueError as exc:
                raise ConfigError(f"{dotted} must be an integer, got {raw!r}") from exc
        elif want is float:
            try:
                value = float(raw)
            except ValueError as exc:
                raise ConfigError(f"{dotted} must be a number, got {raw!r}") from exc
        else:
            value = raw
        config = replace(config, **{section_name: replace(section, **{key: value})})
    return config


def config_digest(config: Config) -> str:
    """Hash of the settings that shape annotation content.

    Storage locations are deliberately left out: the same video
    annotated under the same settings into two different store roots
    must produce byte-identical stores, digest included.
    """

    lines = []
    for section_name in sorted(_SECTION_TYPES):
        section = getattr(config, section_name)
        for f in sorted(fields(type(section)), key=lambda f: f.name):
            lines.append(f"{section_name}.{f.name}={getattr(section, f.name)!r}")
    for spec in config.backends:
        lines.append(
            f"backend={spec.id!r},{spec.role!r},{spec.url!r},{spec.taxonomy!r}"
        )
    blob = "\n".join(lines) + "\n"
    return hashlib.sha256(blob.encode("ascii")).hexdigest()


def make_gateway(config: Config) -> Gateway:
    gateway = Gateway()
    for spec in config.backends:
        gateway.register(spec)
    return gateway


def make_suite(config: Config) -> AgentSuite:
    settings = config.agents
    chat = ChatClient(settings.url, settings.timeout)
    taxonomy = load_taxonomy(settings.taxonomy or None)
    return AgentSuite(
        chat, taxonomy=taxonomy, prompts_dir=settings.prompts_dir or None
    )


def sdr_config(config: Config) -> SdrConfig:
    p = config.pipeline
    return SdrConfig(
        tau=p.match_threshold,
        pad_fraction=p.pad_fraction,
        patch_width=p.patch_width or None,
        stride=p.stride or None,
        shift_fraction=p.shift_fraction,
        refine=p.refine,
    )

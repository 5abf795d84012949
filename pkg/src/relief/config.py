"""Pipeline configuration: TOML/JSON loading with strict validation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .fusion import FusionConfig
from .integration import SolverConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class IOConfig:
    depth_format: str = "pfm"
    normal_format: str = "pfm"

    def __post_init__(self):
        if self.depth_format not in ("pfm", "png16"):
            raise ValueError(f"io.depth_format must be 'pfm' or 'png16', got {self.depth_format!r}")
        if self.normal_format not in ("pfm", "png"):
            raise ValueError(f"io.normal_format must be 'pfm' or 'png', got {self.normal_format!r}")

    @property
    def depth_suffix(self) -> str:
        return ".pfm" if self.depth_format == "pfm" else ".png"

    @property
    def normal_suffix(self) -> str:
        return "." + self.normal_format


@dataclass(frozen=True)
class PipelineConfig:
    fusion: FusionConfig = field(default_factory=FusionConfig)
    integration: SolverConfig = field(default_factory=SolverConfig)
    io: IOConfig = field(default_factory=IOConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelineConfig":
        sections = {f.name: f.default_factory for f in fields(cls)}
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        built = {}
        for name, factory in sections.items():
            built[name] = _build(name, factory, data.get(name, {}))
        return cls(**built)

    def override(self, section: str, **values) -> "PipelineConfig":
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        current = getattr(self, section)
        try:
            return replace(self, **{section: replace(current, **values)})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section}: {exc}") from None


def _build(name: str, factory, values: Any):
    if not isinstance(values, Mapping):
        raise ConfigError(f"section {name!r} must be a table")
    default = factory()
    known = {f.name: f for f in fields(default)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    checked = {}
    for key, val in values.items():
        expected = type(getattr(default, key))
        if val is None and getattr(default, key) is None:
            checked[key] = None
            continue
        if isinstance(val, bool) or not isinstance(val, (int, float, str)):
            raise ConfigError(f"{name}.{key}: unsupported value {val!r}")
        if expected is str and not isinstance(val, str):
            raise ConfigError(f"{name}.{key}: expected a string, got {val!r}")
        if expected in (int, float) or getattr(default, key) is None:
            if isinstance(val, str):
                raise ConfigError(f"{name}.{key}: expected a number, got {val!r}")
            if key in ("outer_iters", "max_cg_iters"):
                if float(val) != int(val):
                    raise ConfigError(f"{name}.{key}: expected an integer, got {val!r}")
                val = int(val)
            else:
                val = float(val)
        checked[key] = val
    try:
        return replace(default, **checked)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def load_config(path: Optional[str]) -> PipelineConfig:
    """Read a TOML or JSON config. A run manifest (with a ``config`` entry) is accepted too."""
    if path is None:
        return PipelineConfig()
    p = Path(path)
    text = p.read_bytes()
    try:
        if p.suffix.lower() == ".toml":
            data = tomllib.loads(text.decode())
        else:
            data = json.loads(text)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: cannot parse config ({exc})") from None
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: config must be a table/object")
    if "manifest_version" in data:
        data = data.get("config", {})
    return PipelineConfig.from_dict(data)

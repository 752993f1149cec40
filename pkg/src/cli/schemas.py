"""Run configuration: one flat ``section.key = value`` text file validated by pydantic."""

from __future__ import annotations

from dataclasses import MISSING, fields
import logging
from pathlib import Path
import re
import types
import typing
from typing import Any, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, create_model

from swincd.errors import ConfigError, ContractError
from swincd.settings import LossConfig, ModelConfig, TrainConfig

logger = logging.getLogger(__name__)

CONFIG_NAME = "config.txt"
_NONE = "none"
_COMMENT = re.compile(r"(^|\s)#.*")


def _unwrap_optional(annotation: Any) -> tuple[Any, bool]:
    if typing.get_origin(annotation) in (Union, types.UnionType):
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if len(args) == 1:
            return args[0], True
    return annotation, False


def _is_tuple(annotation: Any) -> bool:
    return typing.get_origin(_unwrap_optional(annotation)[0]) is tuple


def _section_model(name: str, source: type) -> type[BaseModel]:
    """Pydantic mirror of a settings dataclass; same fields, same defaults."""

    hints = typing.get_type_hints(source)
    definitions: dict[str, Any] = {}
    for f in fields(source):
        default = f.default if f.default is not MISSING else f.default_factory()  # type: ignore[misc]
        definitions[f.name] = (hints[f.name], default)
    model = create_model(  # type: ignore[call-overload]
        name,
        __config__=ConfigDict(extra="forbid", frozen=True),
        **definitions,
    )
    model.__doc__ = f"``{source.__name__}`` fields as a config section."
    return model


ModelSection = _section_model("ModelSection", ModelConfig)
LossSection = _section_model("LossSection", LossConfig)
TrainSection = _section_model("TrainSection", TrainConfig)


class PathsSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    data: Optional[str] = None
    out: Optional[str] = None
    ckpt: Optional[str] = None


_SECTIONS: dict[str, type[BaseModel]] = {
    "model": ModelSection,
    "loss": LossSection,
    "train": TrainSection,
    "paths": PathsSection,
}


class RunConfig(BaseModel):
    """Every knob of a run; each key has a default and unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    model: ModelSection = Field(default_factory=ModelSection)  # type: ignore[valid-type]
    loss: LossSection = Field(default_factory=LossSection)  # type: ignore[valid-type]
    train: TrainSection = Field(default_factory=TrainSection)  # type: ignore[valid-type]
    paths: PathsSection = Field(default_factory=PathsSection)

    def model_settings(self) -> ModelConfig:
        return ModelConfig(**self.model.model_dump())

    def loss_settings(self) -> LossConfig:
        return LossConfig(**self.loss.model_dump())

    def train_settings(self) -> TrainConfig:
        return TrainConfig(**self.train.model_dump())

    def validate_settings(self) -> None:
        """Run the dataclass invariants of every section."""

        self.model_settings()
        self.loss_settings()
        self.train_settings()

    @classmethod
    def from_settings(
        cls,
        model: Optional[ModelConfig] = None,
        loss: Optional[LossConfig] = None,
        train: Optional[TrainConfig] = None,
        **paths: Optional[str],
    ) -> "RunConfig":
        return cls(
            model=ModelSection(**(model or ModelConfig()).as_dict()),
            loss=LossSection(**(loss or LossConfig()).as_dict()),
            train=TrainSection(**(train or TrainConfig()).as_dict()),
            paths=PathsSection(**paths),
        )


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------
def _parse_value(section: type[BaseModel], key: str, raw: str) -> Any:
    info = section.model_fields.get(key)
    if info is None:
        # left for pydantic so the error names the key as an extra input
        return raw
    annotation, optional = _unwrap_optional(info.annotation)
    if optional and raw.lower() == _NONE:
        return None
    if _is_tuple(annotation):
        return tuple(part.strip() for part in raw.split(",") if part.strip())
    return raw


def _format_value(value: Any) -> str:
    if value is None:
        return _NONE
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def _config_error(exc: ValidationError, source: str) -> ConfigError:
    first = exc.errors()[0]
    location = ".".join(str(part) for part in first["loc"])
    return ConfigError(f"{source}: {location}: {first['msg']}")


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse ``section.key = value`` lines; ``#`` at line start or after whitespace starts a comment."""

    raw: dict[str, dict[str, Any]] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = _COMMENT.sub("", line).strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        section_name, dot, field_name = key.partition(".")
        if not sep or not dot or not field_name:
            raise ConfigError(f"{source}:{number}: expected 'section.key = value', got {line!r}")
        section = _SECTIONS.get(section_name)
        if section is None:
            raise ConfigError(f"{source}:{number}: unknown section {section_name!r} in key {key!r}")
        values = raw.setdefault(section_name, {})
        if field_name in values:
            raise ConfigError(f"{source}:{number}: duplicate key {key!r}")
        values[field_name] = _parse_value(section, field_name, value)
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise _config_error(exc, source) from exc
    try:
        config.validate_settings()
    except ContractError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return config


def render_config(config: RunConfig) -> str:
    """Every key with its effective value, in section order."""

    lines = []
    for name in _SECTIONS:
        section = getattr(config, name)
        lines.append(f"# {name}")
        for key, value in section.model_dump().items():
            lines.append(f"{name}.{key} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)


def load_config(path: Optional[str | Path]) -> RunConfig:
    """Defaults when ``path`` is None, otherwise the parsed file."""

    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    logger.info("loaded run config from %s", path)
    return parse_config(text, str(path))


__all__ = [
    "CONFIG_NAME",
    "LossSection",
    "ModelSection",
    "PathsSection",
    "RunConfig",
    "TrainSection",
    "load_config",
    "parse_config",
    "render_config",
]

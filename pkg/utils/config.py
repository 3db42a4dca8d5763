import os
from pathlib import Path
from typing import Optional, Tuple

from dotenv import dotenv_values
from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from errors import ConfigError
from models import CompactionMode, QuantileMode, Strategy


class CompactorSettings(BaseSettings):
    """Hyperparameter defaults, overridable from ``SPLAT_*`` env vars, ``.env`` or a config file."""

    model_config = SettingsConfigDict(env_prefix="SPLAT_", env_file=".env", extra="ignore")

    temperature: float = Field(0.2, gt=0.0)
    lowfreq_side: int = 64
    patch_size: int = Field(4, ge=1)
    quantile_mode: QuantileMode = QuantileMode.LITERAL
    strategy: Strategy = Strategy.VARIATION_X_OPACITY
    mode: CompactionMode = CompactionMode.SELECT
    lambda_io: float = 0.1
    # weight of the perceptual term; stays inert while no perceptual metric is wired in
    perceptual_weight: float = 0.05
    decay: float = 0.05
    interval: int = 1000
    k_start_frac: float = 0.85
    k_floor_frac: float = 0.05
    k_max_frac: float = 0.95
    seed: int = 0
    threads: Optional[int] = Field(default_factory=os.cpu_count)
    background: str = "0,0,0"
    log_level: str = "INFO"

    @field_validator("background")
    @classmethod
    def _check_background(cls, value: str) -> str:
        parse_color(value)
        return value

    @property
    def background_color(self) -> Tuple[float, float, float]:
        return parse_color(self.background)


def parse_color(value: str) -> Tuple[float, float, float]:
    """Parse ``"r,g,b"`` with channels in [0, 1]."""
    try:
        parts = tuple(float(part) for part in value.split(","))
    except ValueError as e:
        raise ValueError(f"invalid color '{value}'") from e
    if len(parts) != 3 or not all(0.0 <= p <= 1.0 for p in parts):
        raise ValueError(f"color must be three values in [0, 1], got '{value}'")
    return parts


def load_settings(config_file: Optional[Path] = None) -> CompactorSettings:
    """Build settings from defaults, environment and an optional key=value file.

    Keys in the file may be written with or without the ``SPLAT_`` prefix, in any case.
    Values from the file win over the environment.
    """
    overrides = {}
    if config_file is not None:
        path = Path(config_file)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        for key, value in dotenv_values(path).items():
            if value is None:
                continue
            name = key.lower()
            if name.startswith("splat_"):
                name = name[len("splat_"):]
            if name not in CompactorSettings.model_fields:
                raise ConfigError(f"unknown config key '{key}' in {path}")
            overrides[name] = value
    try:
        return CompactorSettings(**overrides)
    except ValidationError as e:
        raise ConfigError(" ".join(str(e).split())) from e

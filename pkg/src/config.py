"""
Configuration module for the insulation toolkit
Runtime settings from environment variables and run configs from YAML files
"""

import os
from dataclasses import dataclass
from pathlib import Path

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from .errors import ConfigError
from .models import RunConfig

# Load .env file if present
load_dotenv()


@dataclass
class RuntimeConfig:
    """Process-wide settings; CLI flags override them"""

    log_level: str
    log_format: str
    threads: int
    seed: int
    out_dir: str

    @classmethod
    def from_env(cls) -> "RuntimeConfig":
        """Load runtime configuration from environment variables"""
        log_format = os.environ.get("INSULATION_LOG_FORMAT", "text")
        if log_format not in ("text", "json"):
            raise ConfigError(f"INSULATION_LOG_FORMAT must be text or json, got {log_format!r}")
        try:
            threads = int(os.environ.get("INSULATION_THREADS", "1"))
            seed = int(os.environ.get("INSULATION_SEED", "0"))
        except ValueError as e:
            raise ConfigError(f"invalid integer in environment: {e}")
        if threads < 1:
            raise ConfigError("INSULATION_THREADS must be at least 1")
        return cls(
            log_level=os.environ.get("INSULATION_LOG_LEVEL", "INFO").upper(),
            log_format=log_format,
            threads=threads,
            seed=seed,
            out_dir=os.environ.get("INSULATION_OUT", "out"),
        )


# Global config instance
config: RuntimeConfig | None = None


def get_config() -> RuntimeConfig:
    """Get or initialize the global runtime configuration"""
    global config
    if config is None:
        config = RuntimeConfig.from_env()
    return config


def _field_path(error: dict) -> str:
    return ".".join(str(part) for part in error.get("loc", ())) or "config"


def load_run_config(path: str | Path) -> RunConfig:
    """
    Load and validate a YAML run configuration

    Raises:
        ConfigError: naming the offending field when the file is unreadable or invalid
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"config file {path} is not valid YAML: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(
            f"{_field_path(first)}: {first['msg']}",
            errors=[{"field": _field_path(err), "message": err["msg"]} for err in e.errors()],
        )

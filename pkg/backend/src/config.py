"""Configuration settings for the application."""
from typing import Any, Dict, Optional
import configparser
import json
import logging
from datetime import datetime
from pathlib import Path
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict
from dotenv import load_dotenv

from src.errors import ConfigError, DatasetNotFoundError, UnknownKeyError
from src.models.base import RunConfig

# Load environment variables from .env file
load_dotenv()

RUN_SECTIONS = ("run", "columns", "preprocess", "model", "train", "simulate", "sweep")


def get_log_file(log_dir: Path) -> Path:
    """Get a new log file path with timestamp."""
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)

    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    return log_dir / f"kneeoa_{timestamp}.log"


def setup_logging(level: str = "INFO", log_dir: Optional[Path] = None) -> Optional[Path]:
    """Configure logging for an entry point.

    Logs go to the console and, when ``log_dir`` is given, to a fresh
    timestamped file in it. Returns the log file path, if any.
    """
    try:
        log_format = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        date_format = '%Y-%m-%d %H:%M:%S'
        formatter = logging.Formatter(log_format, date_format)

        root_logger = logging.getLogger()
        root_logger.handlers.clear()

        handlers = [logging.StreamHandler()]
        log_file = None
        if log_dir is not None:
            log_file = get_log_file(log_dir)
            handlers.append(logging.FileHandler(log_file, encoding='utf-8', mode='w'))

        for handler in handlers:
            handler.setFormatter(formatter)
            root_logger.addHandler(handler)
        root_logger.setLevel(level.upper())

        for logger_name in ("src", "__main__"):
            package_logger = logging.getLogger(logger_name)
            package_logger.handlers.clear()
            package_logger.propagate = True
            package_logger.setLevel(level.upper())

        # Set levels for noisy loggers
        logging.getLogger('matplotlib').setLevel(logging.WARNING)
        logging.getLogger('numba').setLevel(logging.WARNING)
        logging.getLogger('sklearn').setLevel(logging.WARNING)

        if log_file is not None:
            logging.getLogger(__name__).info(f"Logging initialized in file: {log_file}")
        return log_file

    except Exception as e:
        print(f"Error setting up logging: {str(e)}")
        raise


class Settings(BaseSettings):
    """Process-level settings read from the environment or a .env file."""
    model_config = SettingsConfigDict(
        env_prefix="KNEEOA_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Only environment override that affects run outputs
    output_dir: Optional[Path] = None

    log_level: str = "INFO"
    log_dir: Optional[Path] = None


def _describe_validation_error(exc: ValidationError) -> ConfigError:
    """Turn a pydantic error into a ConfigError naming the offending field."""
    first = exc.errors()[0]
    location = ".".join(str(part) for part in first.get("loc", ()))
    if first.get("type") == "extra_forbidden":
        return UnknownKeyError(f"Unknown configuration key '{location}'")
    return ConfigError(f"Invalid configuration value for '{location}': {first.get('msg')}")


def read_config_file(path: Path) -> Dict[str, Any]:
    """Parse a sectioned ``key = value`` file into nested dictionaries."""
    path = Path(path)
    if not path.exists():
        raise DatasetNotFoundError(f"Config file not found: {path}")

    if path.suffix == ".json":
        # a run manifest carries the resolved configuration under "config"
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as e:
            raise ConfigError(f"Cannot parse manifest {path}: {e}") from e
        return dict(payload.get("config", payload))

    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigError(f"Cannot parse config file {path}: {e}") from e

    data: Dict[str, Any] = {}
    for section in parser.sections():
        if section not in RUN_SECTIONS:
            raise UnknownKeyError(f"Unknown configuration section '[{section}]'")
        values = dict(parser.items(section))
        if section == "run":
            data.update(values)
        elif section == "simulate":
            tissue = {k[len("tissue."):]: v for k, v in values.items() if k.startswith("tissue.")}
            values = {k: v for k, v in values.items() if not k.startswith("tissue.")}
            if tissue:
                values["tissue"] = tissue
            data[section] = values
        else:
            data[section] = values
    return data


def _deep_merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def build_run_config(
    data: Dict[str, Any],
    overrides: Optional[Dict[str, Any]] = None,
    settings: Optional[Settings] = None,
) -> RunConfig:
    """Validate raw config data into a RunConfig.

    Precedence: explicit overrides (CLI flags), then the output-directory
    environment override, then the config file, then defaults.
    """
    merged = dict(data)
    if settings is not None and settings.output_dir is not None:
        merged["output_dir"] = str(settings.output_dir)
    if overrides:
        merged = _deep_merge(merged, {k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        raise _describe_validation_error(e) from e


def load_run_config(
    path: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
    settings: Optional[Settings] = None,
) -> RunConfig:
    """Load, merge and validate the run configuration."""
    data = read_config_file(path) if path is not None else {}
    config = build_run_config(data, overrides, settings)
    logging.getLogger("src.config").debug(f"Run config hash {config.config_hash()}")
    return config

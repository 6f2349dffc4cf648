"""Configuration management for the toolkit.

The config file is structured text: one ``section.key=value`` per line,
``#`` comments and blank lines ignored. Reports use the same format.
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

from ..errors import ConfigurationError

logger = logging.getLogger(__name__)

THREADS_ENV = "COMPRESSED_ACTION_THREADS"

KNOWN_SECTIONS = {
    "logging",
    "runtime",
    "encode",
    "decode",
    "extract",
    "dataset-gen",
    "train",
    "eval",
    "ablate",
    "grad-check",
    "bench",
    "inspect",
}


def default_thread_count() -> int:
    """Worker count from ``COMPRESSED_ACTION_THREADS``, else 1."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
        return 1


def parse_value(raw: str) -> Any:
    """Interpret a config value as bool, int, float, comma list or string."""
    text = raw.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if not text:
        return None
    if "," in text:
        return [parse_value(part) for part in text.split(",") if part.strip()]
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_structured_text(text: str, source: str = "<text>") -> Dict[str, Any]:
    """Parse ``key=value`` lines into a flat dict keyed by dotted names."""
    values: Dict[str, Any] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"{source}:{number}: expected key=value, got {stripped!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigurationError(f"{source}:{number}: empty key")
        values[key] = parse_value(raw)
    return values


def format_structured_text(values: Dict[str, Any]) -> str:
    return "".join(f"{key}={format_value(value)}\n" for key, value in values.items())


class ConfigManager:
    """Manages configuration for the toolkit."""

    def __init__(self, config_path: Optional[Union[str, Path]] = None):
        self.config_file = Path(config_path) if config_path else None

    def defaults(self) -> Dict[str, Any]:
        return {
            "logging.level": "INFO",
            "logging.file": None,
            "runtime.threads": default_thread_count(),
        }

    def load_config(self) -> Dict[str, Any]:
        """Load configuration from file, merged over the defaults."""
        config = self.defaults()
        if self.config_file is None:
            return config
        if not self.config_file.exists():
            raise ConfigurationError(f"config file not found: {self.config_file}")
        values = parse_structured_text(self.config_file.read_text(), str(self.config_file))
        for key in values:
            section = key.split(".", 1)[0]
            if section not in KNOWN_SECTIONS:
                logger.warning("unknown config section in key %r", key)
        config.update(values)
        return config

    def save_config(self, config: Dict[str, Any]) -> bool:
        """Save configuration to file."""
        if self.config_file is None:
            return False
        try:
            self.config_file.write_text(format_structured_text(config))
            return True
        except OSError as e:
            logger.error("Error saving config: %s", e)
            return False

    def get_section(self, section: str) -> Dict[str, Any]:
        """Keys of one section with the prefix removed."""
        prefix = section + "."
        return {key[len(prefix) :]: value for key, value in self.load_config().items() if key.startswith(prefix)}

    def get_logging_config(self) -> Dict[str, Any]:
        """Get logging configuration."""
        return self.get_section("logging")

    def get_thread_count(self) -> int:
        threads = self.get_section("runtime").get("threads")
        return max(1, int(threads)) if threads else default_thread_count()

    def default_map(self) -> Dict[str, Dict[str, Any]]:
        """Subcommand sections as click ``default_map`` entries (explicit flags win)."""
        mapping: Dict[str, Dict[str, Any]] = {}
        for key, value in self.load_config().items():
            section, _, name = key.partition(".")
            if section in ("logging", "runtime") or not name:
                continue
            mapping.setdefault(section, {})[name.replace("-", "_")] = value
        return mapping

    def create_sample_config(self, path: Union[str, Path]) -> Path:
        """Create a sample configuration file."""
        sample = {
            "logging.level": "INFO",
            "logging.file": None,
            "runtime.threads": 1,
            "encode.gop_size": 12,
            "encode.search_range": 8,
            "train.epochs": 30,
            "train.lr": 0.0001,
            "train.batch_size": 8,
            "eval.clips": 1,
            "grad-check.eps": 1e-5,
        }
        target = Path(path)
        target.write_text(format_structured_text(sample))
        logger.info("Sample configuration created at: %s", target)
        return target

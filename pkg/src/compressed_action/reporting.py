"""Structured-text reports: one ``key=value`` line per field."""

from typing import Any, Dict, Mapping

from .config.manager import format_structured_text


def flatten(values: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    """Nested mappings become dotted keys."""
    flat: Dict[str, Any] = {}
    for key, value in values.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, prefix=f"{name}."))
        else:
            flat[name] = value
    return flat


def format_report(values: Mapping[str, Any], prefix: str = "") -> str:
    return format_structured_text(flatten(values, prefix)).rstrip("\n")

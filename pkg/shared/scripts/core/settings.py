"""
Strict construction of config dataclasses from YAML/JSON mappings.
"""

import dataclasses
from typing import Any, Dict, List, Mapping, Optional, Type, TypeVar

import numpy as np

from .errors import ConfigurationError

T = TypeVar("T")


def _freeze(value: Any) -> Any:
    """Lists from YAML become tuples so configs stay hashable."""
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


def unknown_keys(data: Mapping[str, Any], allowed) -> List[str]:
    return sorted(k for k in data if k not in allowed)


def build_config(cls: Type[T], data: Optional[Mapping[str, Any]], section: str) -> T:
    """
    Build a frozen config dataclass from a mapping.

    Args:
        cls: Dataclass type exposing ``validate() -> List[str]``
        data: Mapping of field overrides (None for all defaults)
        section: Section name used in error messages

    Returns:
        Validated config instance

    Raises:
        ConfigurationError: On unknown keys or failed validation
    """
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    extra = unknown_keys(data, names)
    if extra:
        raise ConfigurationError(f"Unknown keys in '{section}': {', '.join(extra)}")

    config = cls(**{k: _freeze(v) for k, v in data.items()})
    errors = config.validate()
    if errors:
        raise ConfigurationError(f"Invalid '{section}' config: " + "; ".join(errors))
    return config


def config_to_dict(config: Any) -> Dict[str, Any]:
    """Plain-JSON view of a config dataclass (tuples become lists)."""

    def thaw(value):
        if isinstance(value, (tuple, list)):
            return [thaw(v) for v in value]
        if isinstance(value, dict):
            return {k: thaw(v) for k, v in value.items()}
        return value

    return thaw(dataclasses.asdict(config))


def derive_seed(*keys: int) -> int:
    """
    Independent 32-bit seed for a tuple of integer keys.

    Used wherever a stream needs its own seed, e.g. (scene seed, frame) or
    (run seed, bs_id).
    """
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])

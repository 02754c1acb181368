"""Seed fan-out and config fingerprints shared by every stage."""

from __future__ import annotations

import hashlib
import json

__version__ = "0.1.0"


def stage_seed(seed: int, stage: str) -> int:
    """Derive an independent 31-bit seed for ``stage`` from one global seed."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item") and getattr(value, "ndim", 1) == 0:
        return value.item()
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


def canonical_json(config: dict) -> str:
    return json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def header_lines(seed: int, config: dict) -> list[str]:
    """Header comment lines stamped onto every artifact."""
    return [f"ecgfusion {__version__}", f"seed={seed}", f"config_hash={config_hash(config)}"]

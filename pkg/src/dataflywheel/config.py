"""Versioned JSON config files: fail closed on unknown keys or versions."""
from __future__ import annotations

import json
import os
from pathlib import Path

CONFIG_VERSION = 1
ENV_RUN_DIR = "DATAFLYWHEEL_RUN_DIR"
ENV_WORKERS = "DATAFLYWHEEL_WORKERS"


class ConfigError(ValueError):
    pass


def check_keys(d: dict, allowed: set[str], where: str, required: set[str] = frozenset()) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(d)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def read_config(path: str | Path, kind: str) -> dict:
    """Load a config document and check its ``kind`` and ``version`` header."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{p}: no such config file")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: top level must be an object")
    if doc.get("kind") != kind:
        raise ConfigError(f"{p}: expected kind {kind!r}, found {doc.get('kind')!r}")
    if doc.get("version") != CONFIG_VERSION:
        raise ConfigError(f"{p}: unsupported config version {doc.get('version')!r}")
    return doc


def write_config(path: str | Path, kind: str, body: dict) -> None:
    doc = {"kind": kind, "version": CONFIG_VERSION, **body}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def default_workers() -> int:
    env = os.environ.get(ENV_WORKERS)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{ENV_WORKERS} must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{ENV_WORKERS} must be >= 1")
        return n
    return os.cpu_count() or 1


def default_run_dir(fallback: str = "runs/latest") -> Path:
    return Path(os.environ.get(ENV_RUN_DIR, fallback))

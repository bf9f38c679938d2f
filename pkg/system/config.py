"""Centralized configuration loader for noisycp."""
from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Dict

import yaml
from dotenv import load_dotenv

BASE_DIR = Path(__file__).resolve().parents[1]
CONFIGS_DIR = BASE_DIR / "configs"


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Return *base* updated recursively with *override* (nested dicts merged)."""
    merged = dict(base)
    for key, value in override.items():
        if (
            key in merged
            and isinstance(merged[key], dict)
            and isinstance(value, dict)
        ):
            merged[key] = deep_merge(dict(merged[key]), value)
        else:
            merged[key] = value
    return merged


def load_yaml(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise FileNotFoundError(f"Config file missing: {path}")
    with path.open("r", encoding="utf-8") as handle:
        return yaml.safe_load(handle) or {}


def _load_env_files() -> None:
    for candidate in (BASE_DIR / ".env", BASE_DIR / ".env.local"):
        if candidate.exists():
            load_dotenv(dotenv_path=candidate, override=True)


def resolve_threads(raw: str | int | None = None) -> int:
    """Worker cap from NOISY_CP_THREADS; 0 or unset means one per CPU."""
    if raw is None:
        raw = os.getenv("NOISY_CP_THREADS", "0")
    try:
        threads = int(raw)
    except ValueError:
        threads = 0
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads


def _build_config() -> Dict[str, Any]:
    _load_env_files()
    config: Dict[str, Any] = {
        "defaults": load_yaml(CONFIGS_DIR / "defaults.yaml"),
        "env": {},
    }

    env_name = os.getenv("NOISY_CP_ENV")
    if env_name:
        override_path = CONFIGS_DIR / f"env.{env_name}.yaml"
        if override_path.exists():
            config["defaults"] = deep_merge(
                config["defaults"], load_yaml(override_path)
            )
        config["env"]["active"] = env_name

    config["runtime"] = {
        "threads": resolve_threads(),
        "log_level": os.getenv("NOISY_CP_LOG_LEVEL", "INFO"),
    }
    return config


CONFIG = _build_config()

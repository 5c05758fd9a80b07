"""
Settings for the attestation toolkit.

Settings come from a dotenv-style KEY=VALUE file. The path is taken from the
explicit argument, else from ATTESTCHAIN_CONFIG; with neither, defaults apply.
"""
from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import dotenv_values
from pydantic import BaseModel, Field, ValidationError

from .errors import ConfigInvalid
from ..models.dependability import CtmcParams
from ..models.evidence import SessionConfig, SwfParams
from ..models.platform import MemoryHardParams
from ..models.simulation import FaultProfile, TypingModel

logger = logging.getLogger(__name__)

CONFIG_PATH_ENV = "ATTESTCHAIN_CONFIG"

# Development-only platform secret; real deployments set PLATFORM_SECRET.
DEV_PLATFORM_SECRET = bytes.fromhex("6465762d706c6174666f726d2d7365637265742d6174746573746368612d3031")


def _flag(raw: Optional[str], default: bool) -> bool:
    if raw is None:
        return default
    return str(raw).strip().lower() in {"1", "true", "yes", "on"}


class Settings(BaseModel):
    platform_secret: bytes = DEV_PLATFORM_SECRET
    root_key_path: Optional[Path] = None
    mh_memory_kib: int = Field(64 * 1024, ge=8)
    mh_time_cost: int = Field(1, ge=1)
    swf_chain_length: int = Field(2**20, ge=1)
    swf_merkle_stride: int = Field(2**12, ge=1)
    swf_sample_count: int = Field(8, ge=1)
    checkpoint_interval_s: float = Field(30.0, gt=0)
    entropy_threshold: float = Field(1.5, ge=0)
    quote_every_n: int = Field(10, ge=1)
    input_tier: int = Field(1, ge=1, le=3)
    tee_available: bool = True
    store_retain: int = Field(3, ge=0)
    store_fsync: bool = True
    log_level: str = "INFO"
    presets_path: Optional[Path] = None

    @property
    def memory_hard(self) -> MemoryHardParams:
        return MemoryHardParams(memory_cost=self.mh_memory_kib * 1024, time_cost=self.mh_time_cost)

    @property
    def swf_params(self) -> SwfParams:
        return SwfParams(
            mh=self.memory_hard,
            chain_length=self.swf_chain_length,
            merkle_stride=self.swf_merkle_stride,
            sample_count=self.swf_sample_count,
        )

    def session_config(self, **overrides: Any) -> SessionConfig:
        values: Dict[str, Any] = {
            "checkpoint_interval_s": self.checkpoint_interval_s,
            "swf": self.swf_params,
            "entropy_threshold": self.entropy_threshold,
            "tier": self.input_tier,
            "quote_every_n": self.quote_every_n,
            "tee_available": self.tee_available,
        }
        values.update(overrides)
        try:
            return SessionConfig(**values)
        except ValidationError as e:
            raise ConfigInvalid(str(e)) from e


# key in file -> Settings field
_KEYS = {
    "PLATFORM_SECRET": "platform_secret",
    "ROOT_KEY_PATH": "root_key_path",
    "MH_MEMORY_KIB": "mh_memory_kib",
    "MH_TIME_COST": "mh_time_cost",
    "SWF_CHAIN_LENGTH": "swf_chain_length",
    "SWF_MERKLE_STRIDE": "swf_merkle_stride",
    "SWF_SAMPLE_COUNT": "swf_sample_count",
    "CHECKPOINT_INTERVAL_S": "checkpoint_interval_s",
    "ENTROPY_THRESHOLD": "entropy_threshold",
    "QUOTE_EVERY_N": "quote_every_n",
    "INPUT_TIER": "input_tier",
    "TEE_AVAILABLE": "tee_available",
    "STORE_RETAIN": "store_retain",
    "STORE_FSYNC": "store_fsync",
    "LOG_LEVEL": "log_level",
    "PRESETS_PATH": "presets_path",
}
_BOOL_KEYS = {"TEE_AVAILABLE", "STORE_FSYNC"}


def settings_from_mapping(raw: Dict[str, Optional[str]], base_dir: Optional[Path] = None) -> Settings:
    values: Dict[str, Any] = {}
    for key, field in _KEYS.items():
        val = raw.get(key)
        if val is None or str(val).strip() == "":
            continue
        val = str(val).strip()
        if key == "PLATFORM_SECRET":
            try:
                values[field] = bytes.fromhex(val)
            except ValueError as e:
                raise ConfigInvalid("PLATFORM_SECRET must be hex") from e
        elif key in _BOOL_KEYS:
            values[field] = _flag(val, True)
        elif key in ("ROOT_KEY_PATH", "PRESETS_PATH"):
            p = Path(val)
            values[field] = p if p.is_absolute() or base_dir is None else (base_dir / p)
        else:
            values[field] = val

    unknown = sorted(k for k in raw if k not in _KEYS)
    if unknown:
        logger.warning("[config] ignoring unknown keys: %s", ", ".join(unknown))

    try:
        settings = Settings(**values)
    except ValidationError as e:
        raise ConfigInvalid(str(e)) from e

    if "platform_secret" not in values:
        logger.warning("[config] PLATFORM_SECRET not set; using the development secret")
    return settings


def load_settings(config_path: Optional[Path | str] = None) -> Settings:
    """Load settings from a KEY=VALUE file (argument, then ATTESTCHAIN_CONFIG)."""
    path_str = str(config_path) if config_path else os.getenv(CONFIG_PATH_ENV, "").strip()
    if not path_str:
        logger.debug("[config] no config file; using defaults")
        return settings_from_mapping({})

    path = Path(path_str)
    if not path.exists():
        raise ConfigInvalid(f"config file not found: {path}")
    logger.info("[config] loading %s", path)
    return settings_from_mapping(dotenv_values(path), base_dir=path.resolve().parent)


# ----------------------------------------------------------------------
# YAML-backed inputs
# ----------------------------------------------------------------------
def _load_yaml(path: Path | str) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigInvalid(f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{path} must hold a mapping")
    return data


def load_fault_profile(path: Path | str) -> FaultProfile:
    try:
        return FaultProfile(**_load_yaml(path))
    except ValidationError as e:
        raise ConfigInvalid(f"bad fault profile {path}: {e}") from e


def load_typing_model(path: Path | str) -> TypingModel:
    try:
        return TypingModel(**_load_yaml(path))
    except ValidationError as e:
        raise ConfigInvalid(f"bad typing model {path}: {e}") from e


BUILTIN_PRESETS: Dict[str, CtmcParams] = {
    "desktop": CtmcParams(lambda_c=1e-3, lambda_p=1e-2, mu_r=3600.0, mu_f=360.0, mu_p=6.0, p_f=0.01),
    "server": CtmcParams(lambda_c=1e-4, lambda_p=1e-2, mu_r=3600.0, mu_f=360.0, mu_p=6.0, p_f=0.01),
    "iot": CtmcParams(lambda_c=1e-1, lambda_p=1e-2, mu_r=3600.0, mu_f=360.0, mu_p=6.0, p_f=0.01),
}


def load_presets(settings: Optional[Settings] = None) -> Dict[str, CtmcParams]:
    """Built-in presets, overlaid by PRESETS_PATH entries when configured."""
    presets = dict(BUILTIN_PRESETS)
    path = settings.presets_path if settings else None
    if path is None:
        return presets
    for name, body in _load_yaml(path).items():
        try:
            base = presets.get(name, CtmcParams())
            presets[name] = base.model_copy(update=dict(body or {}))
            CtmcParams(**presets[name].model_dump())
        except (ValidationError, TypeError) as e:
            raise ConfigInvalid(f"bad preset '{name}': {e}") from e
    return presets


def get_preset(name: str, settings: Optional[Settings] = None) -> CtmcParams:
    presets = load_presets(settings)
    if name not in presets:
        raise ConfigInvalid(f"unknown preset '{name}' (known: {', '.join(sorted(presets))})")
    return presets[name]

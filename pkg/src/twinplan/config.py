"""Run-config files: INI sections [planner], [sim], [critic], [render].

CLI flags mirror every key and win on conflict.
"""
from __future__ import annotations

import configparser
from dataclasses import fields, replace
from pathlib import Path
from typing import Dict, Optional

from .planner import PlannerConfig
from .sim import SimConfig

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


def _coerce(raw: str, target_type):
    if target_type is bool:
        low = raw.strip().lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is tuple:
        return tuple(float(x) for x in raw.replace(",", " ").split())
    return raw


def load_run_config(path) -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser()
    text = Path(path).read_text(encoding="utf-8")
    parser.read_string(text)
    out: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        if section not in ("planner", "sim", "critic", "render"):
            raise ConfigError(f"unknown run-config section [{section}]")
        out[section] = dict(parser.items(section))
    return out


def _apply(cfg, section: Dict[str, str]):
    by_name = {f.name: f for f in fields(cfg)}
    updates = {}
    for key, raw in section.items():
        if key not in by_name:
            raise ConfigError(f"unknown config key '{key}'")
        current = getattr(cfg, key)
        target = type(current) if current is not None else str
        if target is tuple:
            updates[key] = _coerce(raw, tuple)
        else:
            updates[key] = _coerce(raw, target)
    return replace(cfg, **updates)


def build_planner_config(run_config: Dict[str, Dict[str, str]],
                         overrides: Optional[dict] = None) -> PlannerConfig:
    cfg = PlannerConfig()
    if "planner" in run_config:
        cfg = _apply(cfg, run_config["planner"])
    if overrides:
        cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg


def build_sim_config(run_config: Dict[str, Dict[str, str]],
                     overrides: Optional[dict] = None) -> SimConfig:
    cfg = SimConfig()
    if "sim" in run_config:
        cfg = _apply(cfg, run_config["sim"])
    if overrides:
        cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg


def critic_settings(run_config: Dict[str, Dict[str, str]],
                    overrides: Optional[dict] = None) -> Dict[str, str]:
    out = dict(run_config.get("critic", {}))
    if overrides:
        out.update({k: v for k, v in overrides.items() if v is not None})
    return out

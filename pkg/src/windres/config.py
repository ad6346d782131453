"""Run configuration: defaults < YAML file < ``WINDRES_*`` environment < command-line flags."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

ENV_PREFIX = "WINDRES_"
ARTIFACT_VERSION = 1

DEFAULTS: dict[str, Any] = {
    "out": "out",
    "seed": 0,
    "jobs": 1,
    "outages": {"path": None, "schema": {}},
    "wind": [],
    "areas": None,
    "ingest": {"max_gap": 201},
    "curve": {"v_max": None, "window": "auto"},
    "fit": {"weighted": False},
    "events": {"thresholds": [2, 15], "zero_rates": False},
    "montecarlo": {
        "m": 2000, "d": 0.01, "confidence": 0.99,
        "adaptive": True, "max_factor": 4, "mode": "subset",
    },
    "restoration": {"regroup": False},
    "counterfactuals": [],
    "synth": {"out": "data", "scenarios": [{"preset": "area2", "station_id": "S1",
                                           "duration_days": 365}]},
}

# keys that must not change artifact bytes
_UNHASHED = ("out", "jobs")


class ConfigError(ValueError):
    pass


def deep_merge(base: dict, override: Mapping) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> dict:
    """``WINDRES_MONTECARLO__M=500`` becomes ``{"montecarlo": {"m": 500}}``."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, raw in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = yaml.safe_load(raw)
    return out


def load_config(path=None, flags: Optional[Mapping] = None,
                environ: Optional[Mapping[str, str]] = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    base_dir = Path.cwd()
    if path is not None:
        p = Path(path)
        try:
            data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {p} is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {p} must be a mapping")
        cfg = deep_merge(cfg, data)
        base_dir = p.resolve().parent
    cfg = deep_merge(cfg, env_overrides(environ))
    cfg = deep_merge(cfg, {k: v for k, v in (flags or {}).items() if v is not None})
    cfg["_base_dir"] = str(base_dir)
    validate(cfg)
    return cfg


def validate(cfg: dict):
    lo, hi = cfg["events"]["thresholds"]
    if not 0 < lo < hi:
        raise ConfigError("size-class thresholds must be increasing positive integers")
    if cfg["ingest"]["max_gap"] <= 0:
        raise ConfigError("ingest.max_gap must be positive")
    if int(cfg["jobs"]) < 1:
        raise ConfigError("jobs must be >= 1")
    names = [c.get("name", c.get("kind")) for c in cfg["counterfactuals"]]
    if len(names) != len(set(names)):
        raise ConfigError("counterfactual names must be unique")


def resolve(cfg: dict, path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(cfg.get("_base_dir", ".")) / p


def config_hash(cfg: dict) -> str:
    clean = {k: v for k, v in cfg.items() if k not in _UNHASHED and not k.startswith("_")}
    blob = json.dumps(clean, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def provenance(cfg: dict, stage: str, **flags) -> dict:
    return {
        "artifact_version": ARTIFACT_VERSION,
        "stage": stage,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "flags": flags,
    }

"""Run configuration files (JSON) with strict key checking.

Layout::

    {
      "schema_version": 1,
      "target": "cauchy",
      "method": "fkl-vb",
      "seed": 0,
      "boost": {... BoostConfig fields ...},
      "hmc": {... HmcConfig fields ...},
      "experiment": {"name": ..., "seeds": ..., "splits": ..., "prior": ..., "data": ...,
                     "methods": [...], "samples": ..., "weighting": ..., "jobs": ...},
      "estimate": {"proposal": ..., "samples": ...},
      "output": {"out": ...}
    }

Every section is optional. Values given on the command line take
precedence over the file, which takes precedence over the built-in defaults.
"""

from __future__ import annotations

import json
from dataclasses import fields

from .boost import BoostConfig
from .errors import ConfigError
from .hmc import HmcConfig

SCHEMA_VERSION = 1

EXPERIMENT_KEYS = {"name", "seeds", "splits", "prior", "data", "methods", "samples", "weighting", "jobs", "k",
                   "dump_grids"}
ESTIMATE_KEYS = {"proposal", "samples"}
OUTPUT_KEYS = {"out"}
TOP_KEYS = {"schema_version", "target", "method", "seed", "k", "boost", "hmc", "experiment", "estimate", "output"}


def _check_keys(section: dict, allowed, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"config key {where!r} must be an object")
    for key in section:
        if key not in allowed:
            name = f"{where}.{key}" if where else key
            raise ConfigError(f"unknown config key {name!r}")


def validate(doc: dict) -> dict:
    _check_keys(doc, TOP_KEYS, "")
    if "schema_version" not in doc:
        raise ConfigError("config key 'schema_version' is missing")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"config key 'schema_version' must be {SCHEMA_VERSION}, got {doc['schema_version']!r}")
    _check_keys(doc.get("boost", {}), {f.name for f in fields(BoostConfig)}, "boost")
    _check_keys(doc.get("hmc", {}), {f.name for f in fields(HmcConfig)}, "hmc")
    _check_keys(doc.get("experiment", {}), EXPERIMENT_KEYS, "experiment")
    _check_keys(doc.get("estimate", {}), ESTIMATE_KEYS, "estimate")
    _check_keys(doc.get("output", {}), OUTPUT_KEYS, "output")
    return doc


def load(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return validate(doc)


def build_boost_config(base: dict, file_section: dict, flags: dict) -> BoostConfig:
    """Merge profile defaults, the file's ``boost`` section and command-line values."""
    kw = dict(base)
    kw.update(file_section)
    kw.update({k: v for k, v in flags.items() if v is not None})
    try:
        return BoostConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid boost config: {exc}") from exc


def build_hmc_config(file_section: dict, flags: dict) -> HmcConfig:
    kw = dict(file_section)
    kw.update({k: v for k, v in flags.items() if v is not None})
    try:
        return HmcConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid hmc config: {exc}") from exc

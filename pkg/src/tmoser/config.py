"""Strict JSON experiment configuration."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


def _bubble_rmax(n: int) -> float:
    # 1 - mass(R) ~ (n-1) / (c_n R^{n/(n-1)}) must be well below 1e-3
    return {2: 100.0, 3: 200.0}.get(n, 1000.0)


def _green_rmax(n: int) -> float:
    return 40.0 if n == 2 else 45.0


DEFAULTS = {
    "n": None,
    "seed": 0,
    "tol": None,
    "out_dir": "out",
    "grid": {"inner_count": 256, "outer_count": 384, "inner_scale": 0.1},
    "bubble": {"rmax": None, "residual_nodes": 512},
    "green": {"R_max": None, "r_inner": 1e-5, "tol": 1e-8, "deltas": [0.1, 0.5]},
    "test1": {"eps": [1e-4, 1e-6, 1e-8]},
    "test2": {"c": [1.0, 2.0, 3.0, 4.0, 6.0, 8.0], "b": [1.0, 2.0, 4.0, 8.0]},
    "sharpness": {"c": [1.0, 2.0, 3.0, 4.0], "factors": [1.05, 0.9, 1.0], "L_outer": 1.0},
    "maximize": {
        "R": [1.0],
        "beta_factor": [0.9],
        "seeds": 5,
        "max_iters": 4000,
        "blowup_L": 20.0,
    },
}

_KINDS = {
    "n": int,
    "seed": int,
    "tol": (int, float, type(None)),
    "out_dir": str,
    "grid.inner_count": int,
    "grid.outer_count": int,
    "grid.inner_scale": (int, float),
    "bubble.rmax": (int, float, type(None)),
    "bubble.residual_nodes": int,
    "green.R_max": (int, float, type(None)),
    "green.r_inner": (int, float),
    "green.tol": (int, float),
    "green.deltas": list,
    "test1.eps": list,
    "test2.c": list,
    "test2.b": list,
    "sharpness.c": list,
    "sharpness.factors": list,
    "sharpness.L_outer": (int, float),
    "maximize.R": list,
    "maximize.beta_factor": list,
    "maximize.seeds": int,
    "maximize.max_iters": int,
    "maximize.blowup_L": (int, float),
}


def _reject_duplicates(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise ConfigError(f"{key}: duplicate key")
        out[key] = value
    return out


def _merge(base: dict, extra: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"{path}: unknown key")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: expected an object")
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = value
    return out


def _check_types(cfg: dict, prefix: str = "") -> None:
    for key, value in cfg.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            _check_types(value, path + ".")
            continue
        kind = _KINDS[path]
        if isinstance(value, bool) or not isinstance(value, kind):
            raise ConfigError(f"{path}: wrong type {type(value).__name__}")
        if isinstance(value, list) and not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"{path}: expected a list of numbers")


def _positive(cfg, path):
    section, _, key = path.rpartition(".")
    value = cfg[section][key] if section else cfg[key]
    values = value if isinstance(value, list) else [value]
    if value is not None and any(not v > 0 for v in values):
        raise ConfigError(f"{path}: must be positive")


def validate(raw: dict) -> dict:
    """Merge `raw` into the defaults, type-check it and fill per-dimension defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>: expected a JSON object")
    cfg = _merge(DEFAULTS, raw)
    if cfg["n"] is None:
        raise ConfigError("n: required")
    _check_types(cfg)
    n = cfg["n"]
    if n < 2:
        raise ConfigError("n: n must be >= 2")
    for path in (
        "grid.inner_scale",
        "bubble.rmax",
        "green.R_max",
        "green.r_inner",
        "green.tol",
        "green.deltas",
        "test1.eps",
        "test2.c",
        "test2.b",
        "sharpness.c",
        "sharpness.factors",
        "sharpness.L_outer",
        "maximize.R",
        "maximize.beta_factor",
        "maximize.blowup_L",
        "tol",
    ):
        _positive(cfg, path)
    for path in ("grid.inner_count", "grid.outer_count"):
        section, key = path.split(".")
        if cfg[section][key] < 8:
            raise ConfigError(f"{path}: must be >= 8")
    if any(not e < 0.36 for e in cfg["test1"]["eps"]):
        raise ConfigError("test1.eps: values must be below 1/e")
    if any(f > 1.0 + 1e-12 for f in cfg["maximize"]["beta_factor"]):
        raise ConfigError("maximize.beta_factor: must be <= 1 (beta <= alpha_n)")
    if len(cfg["maximize"]["R"]) != len(cfg["maximize"]["beta_factor"]):
        raise ConfigError("maximize.beta_factor: must have the same length as maximize.R")
    if cfg["maximize"]["seeds"] < 1:
        raise ConfigError("maximize.seeds: must be >= 1")
    if cfg["bubble"]["rmax"] is None:
        cfg["bubble"]["rmax"] = _bubble_rmax(n)
    if cfg["green"]["R_max"] is None:
        cfg["green"]["R_max"] = _green_rmax(n)
    return cfg


def load_config(path) -> dict:
    """Read, merge with defaults and validate a JSON config file."""
    return validate(load_raw(path))


def load_raw(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<file>: malformed JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>: expected a JSON object")
    return raw


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()

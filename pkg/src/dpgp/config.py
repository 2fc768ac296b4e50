"""Experiment configuration: JSON files layered over per-task defaults."""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path

TASKS = ("infer", "calibrate", "hyperparams", "synth")

_COMMON = {
    "task": None,
    "seed": 0,
    "repeats": 1,
    "delta": 1e-4,
    "kernel": {"family": "exponentiated_quadratic", "variance": 1.0, "lengthscales": [1.0]},
    "inducing": {"lower": [-3.0], "upper": [3.0], "counts": [9]},
    "data": {"source": "sinc", "n": 1024, "interval": [-4.0, 4.0], "noise_sd": 0.1},
    "r_y": 1.5,
    "c": 1.0,
    "sensitivity_method": "auto",
    "rho_pd": 0.01,
    "workers": 1,
}

DEFAULTS = {
    "infer": {
        **_COMMON,
        "repeats": 40,
        "epsilons": [0.3, 1.0, 3.0, 10.0, 30.0],
        "noise_sd": 0.1,
        "prediction_grid": {"lower": -4.0, "upper": 4.0, "n": 200},
        "test_fraction": 0.0,
        "private_prior_mean": None,
    },
    "calibrate": {
        **_COMMON,
        "repeats": 40,
        "epsilons": [1.0, 3.0, 10.0],
        "noise_sds": [0.033, 0.1, 0.3],
        "alphas": [0.5, 0.9],
        "inducing": {"lower": [-3.5], "upper": [3.5], "counts": [15]},
        "data": {"source": "gp", "n": 1024, "interval": [-4.0, 4.0]},
        "r_y": 4.0,
    },
    "hyperparams": {
        **_COMMON,
        "repeats": 100,
        "epsilons": [0.3, 3.0, 10.0, 30.0],
        "data": {"source": "sinc", "n": 2048, "interval": [-4.0, 4.0], "noise_sd": 0.1},
        "noise_sds": [0.1 / 3, 0.1, 0.3],
        "lengthscales": [1 / 3, 1.0, 3.0],
        "gamma": 0.01,
        "coinpress": {"iterations": 12, "last_iteration_fraction": 0.75, "spread": 1.0},
    },
    "synth": {
        "task": None,
        "seed": 0,
        "kernel": _COMMON["kernel"],
        "data": {"source": "sinc", "n": 1024, "interval": [-4.0, 4.0], "noise_sd": 0.1},
    },
}

# nested sections whose keys are validated too; None means free-form
_SECTIONS = {
    "kernel": {"family", "variance", "lengthscales"},
    "inducing": {"lower", "upper", "counts"},
    "data": {"source", "n", "interval", "noise_sd", "path", "output_column"},
    "prediction_grid": {"lower", "upper", "n"},
    "coinpress": {"iterations", "last_iteration_fraction", "spread", "confidence"},
    "private_prior_mean": {"epsilon", "delta", "center", "radius"},
}


class ConfigError(ValueError):
    pass


def _parse_epsilon(value):
    if isinstance(value, str):
        if value.lower() in ("inf", "infinity"):
            return math.inf
        raise ConfigError(f"bad epsilon {value!r}")
    return float(value)


def resolve(raw: dict, task: str = None, seed: int = None) -> dict:
    """Merge ``raw`` over the defaults for its task and validate it."""
    raw = dict(raw)
    task = task or raw.get("task")
    if task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {task!r}")
    if raw.get("task") not in (None, task):
        raise ConfigError(f"config is for task {raw['task']!r}, not {task!r}")
    cfg = copy.deepcopy(DEFAULTS[task])
    for key, value in raw.items():
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r} for task {task!r}")
        allowed = _SECTIONS.get(key)
        if allowed is not None and value is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"{key!r} must be an object")
            unknown = set(value) - allowed
            if unknown:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(unknown)}")
            base = cfg[key] if isinstance(cfg[key], dict) else {}
            if key == "data" and value.get("source", base.get("source")) != base.get("source"):
                base = {}
            cfg[key] = {**base, **value}
        else:
            cfg[key] = value
    cfg["task"] = task
    if seed is not None:
        cfg["seed"] = int(seed)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    if cfg.get("repeats", 1) < 1:
        raise ConfigError("repeats must be at least 1")
    if "epsilons" in cfg:
        cfg["epsilons"] = [_parse_epsilon(e) for e in cfg["epsilons"]]
        if not cfg["epsilons"] or any(not e > 0 for e in cfg["epsilons"]):
            raise ConfigError("every epsilon must be positive")
    for a in cfg.get("alphas", []):
        if not 0 < a < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {a}")
    if "delta" in cfg and not 0 < cfg["delta"] < 1:
        raise ConfigError("delta must lie in (0, 1)")
    data = cfg.get("data", {})
    if data.get("source") not in ("sinc", "gp", "csv"):
        raise ConfigError(f"data source must be sinc, gp or csv, got {data.get('source')!r}")
    if data["source"] == "csv" and "path" not in data:
        raise ConfigError("csv data needs a path")


def load(path, task: str = None, seed: int = None) -> dict:
    with Path(path).open() as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    return resolve(raw, task, seed)


def to_json(cfg: dict) -> str:
    def enc(v):
        if isinstance(v, float) and math.isinf(v):
            return "inf"
        if isinstance(v, dict):
            return {k: enc(x) for k, x in v.items()}
        if isinstance(v, list):
            return [enc(x) for x in v]
        return v

    return json.dumps(enc(cfg), indent=2, sort_keys=True) + "\n"

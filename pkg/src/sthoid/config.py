"""Pipeline configuration: one JSON document with a section per stage."""
from __future__ import annotations

import copy
import json
import os
from pathlib import Path

DEFAULTS = {
    "tracking": {"segment_len": 10, "segment_stride": 5, "beta": 0.5, "merge_threshold": 0.5},
    "pairing": {"candidate_len": 10, "min_track_len": 10},
    "features": {"part_ratio": 0.2, "min_visibility": 0.3, "roi_size": 7, "num_parts": 17},
    "recognition": {
        "hidden": 64, "learning_rate": 0.2, "epochs": 200, "batch_size": 32, "seed": 0,
        "use_behavior": True, "use_mask": True, "late_fusion": True, "factorized": True,
        "train_negatives": True, "score_threshold": 0.2, "top_k": 10, "use_confidence": False,
    },
    "evaluation": {"viou_threshold": 0.5, "k_values": [50, 100], "n_values": [1, 5, 10]},
    "runtime": {"workers": 0},
}

WORKERS_ENV = "STHOID_WORKERS"


class ConfigError(ValueError):
    pass


def _ratio_open(v):
    return 0 < v < 1


def _positive(v):
    return v >= 1


RULES = {
    "tracking.segment_len": (int, _positive, ">= 1"),
    "tracking.segment_stride": (int, _positive, ">= 1 and <= segment_len"),
    "tracking.beta": (float, _ratio_open, "in (0, 1)"),
    "tracking.merge_threshold": (float, lambda v: 0 < v <= 1, "in (0, 1]"),
    "pairing.candidate_len": (int, lambda v: v >= 2, ">= 2"),
    "pairing.min_track_len": (int, _positive, ">= 1"),
    "features.part_ratio": (float, _ratio_open, "in (0, 1)"),
    "features.min_visibility": (float, lambda v: 0 <= v <= 1, "in [0, 1]"),
    "features.roi_size": (int, _positive, ">= 1"),
    "features.num_parts": (int, lambda v: 1 <= v <= 17, "in [1, 17]"),
    "recognition.hidden": (int, _positive, ">= 1"),
    "recognition.learning_rate": (float, lambda v: v > 0, "> 0"),
    "recognition.epochs": (int, lambda v: v >= 0, ">= 0"),
    "recognition.batch_size": (int, _positive, ">= 1"),
    "recognition.seed": (int, lambda v: v >= 0, ">= 0"),
    "recognition.use_behavior": (bool, None, "a boolean"),
    "recognition.use_mask": (bool, None, "a boolean"),
    "recognition.late_fusion": (bool, None, "a boolean"),
    "recognition.factorized": (bool, None, "a boolean"),
    "recognition.train_negatives": (bool, None, "a boolean"),
    "recognition.score_threshold": (float, lambda v: 0 <= v <= 1, "in [0, 1]"),
    "recognition.top_k": (int, _positive, ">= 1"),
    "recognition.use_confidence": (bool, None, "a boolean"),
    "evaluation.viou_threshold": (float, lambda v: 0 < v <= 1, "in (0, 1]"),
    "evaluation.k_values": (list, lambda v: bool(v) and all(isinstance(k, int) and k >= 1 for k in v),
                            "a non-empty list of positive integers"),
    "evaluation.n_values": (list, lambda v: bool(v) and all(isinstance(k, int) and k >= 1 for k in v),
                            "a non-empty list of positive integers"),
    "runtime.workers": (int, lambda v: v >= 0, ">= 0 (0 = available parallelism)"),
}


def _typed(key, value):
    kind = RULES[key][0]
    if kind is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key} must be a boolean, got {value!r}")
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return int(value)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if not isinstance(value, list):
        raise ConfigError(f"{key} must be a list, got {value!r}")
    return value


def validate(cfg: dict) -> dict:
    for section, fields in cfg.items():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section {section!r}")
        for name in fields:
            if name not in DEFAULTS[section]:
                raise ConfigError(f"unknown config field {section}.{name}")
    for key, (_, check, text) in RULES.items():
        section, name = key.split(".")
        value = _typed(key, cfg[section][name])
        cfg[section][name] = value
        if check is not None and not check(value):
            raise ConfigError(f"{key} must be {text}, got {value!r}")
    if cfg["tracking"]["segment_stride"] > cfg["tracking"]["segment_len"]:
        raise ConfigError("tracking.segment_stride must be >= 1 and <= segment_len")
    return cfg


def load_config(path=None, overrides=()) -> dict:
    """Defaults, updated by an optional JSON file, then ``section.field=value`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        for section, fields in doc.items():
            if section not in cfg or not isinstance(fields, dict):
                raise ConfigError(f"unknown config section {section!r}")
            cfg[section].update(fields)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"override {item!r} must look like section.field=value")
        section, name = key.split(".", 1)
        if section not in cfg or name not in cfg[section]:
            raise ConfigError(f"unknown config field {key}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        cfg[section][name] = value
    return validate(cfg)


def worker_count(cfg: dict) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{WORKERS_ENV} must be >= 1")
        return n
    return cfg["runtime"]["workers"] or os.cpu_count() or 1


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=False)

"""Flat ``key = value`` run configuration with default < file < flag precedence."""

from __future__ import annotations

import hashlib
import os
from dataclasses import fields
from pathlib import Path

from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _str(text):
    return str(text).strip()


_model_defaults = {f.name: f.default for f in fields(ModelConfig)}
_train_defaults = {f.name: f.default for f in fields(TrainConfig)}

# key -> (parser, default)
KEYS = {
    "manifest": (_str, ""),
    "test_manifest": (_str, ""),
    "train_fraction": (float, 0.8),
    "repeats": (int, 1),
    "resolution": (int, _model_defaults["resolution"]),
    "backbone": (_str, _model_defaults["backbone"]),
    "stage_channels": (_ints, _model_defaults["stage_channels"]),
    "pretrained_source": (_str, _model_defaults["pretrained_source"]),
    "fusion_channels": (int, _model_defaults["fusion_channels"]),
    "ablate_cmp": (_bool, False),
    "ablate_sda": (_bool, False),
    "ablate_cae": (_bool, False),
    "dropout": (float, _model_defaults["dropout"]),
    "regressor_hidden": (int, _model_defaults["regressor_hidden"]),
    "cae_expansion": (int, _model_defaults["cae_expansion"]),
    "modulated": (_bool, True),
    "epochs": (int, _train_defaults["epochs"]),
    "batch_size": (int, _train_defaults["batch_size"]),
    "lr": (float, _train_defaults["lr"]),
    "weight_decay": (float, _train_defaults["weight_decay"]),
    "seed": (int, _train_defaults["seed"]),
    "schedule": (_str, _train_defaults["schedule"]),
    "cache_features": (_bool, False),
}

MODEL_KEYS = tuple(f.name for f in fields(ModelConfig))
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))


def defaults() -> dict:
    return {k: default for k, (_, default) in KEYS.items()}


def parse_config_text(text, origin="<config>") -> dict:
    values, problems = {}, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{origin}:{lineno}: expected key = value")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            problems.append(f"{origin}:{lineno}: unknown key {key!r}")
            continue
        try:
            values[key] = KEYS[key][0](value)
        except ValueError as exc:
            problems.append(f"{origin}:{lineno}: bad value for {key!r}: {exc}")
    if problems:
        raise ConfigError(problems)
    return values


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file {path} not found"])
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def resolve(file_values=None, cli_values=None) -> dict:
    """Built-in defaults, overridden by the config file, overridden by flags.

    ``None`` in ``cli_values`` means the flag was not given.
    """
    merged = defaults()
    merged.update(file_values or {})
    problems = []
    for key, value in (cli_values or {}).items():
        if value is None:
            continue
        if key not in KEYS:
            problems.append(f"unknown key {key!r}")
            continue
        try:
            merged[key] = KEYS[key][0](value) if isinstance(value, str) else value
        except ValueError as exc:
            problems.append(f"bad value for {key!r}: {exc}")
    if problems:
        raise ConfigError(problems)
    validate(merged)
    return merged


def model_config(values) -> ModelConfig:
    return ModelConfig(**{k: values[k] for k in MODEL_KEYS})


def train_config(values) -> TrainConfig:
    return TrainConfig(**{k: values[k] for k in TRAIN_KEYS})


def validate(values):
    problems = []
    for name, build in (("model", model_config), ("train", train_config)):
        try:
            build(values)
        except (ValueError, TypeError) as exc:
            problems.append(f"{name}: {exc}")
    if not 0 < values["train_fraction"] < 1:
        problems.append("train_fraction must lie in (0, 1)")
    if values["repeats"] < 1:
        problems.append("repeats must be >= 1")
    if problems:
        raise ConfigError(problems)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def snapshot_text(values) -> str:
    return "".join(f"{k} = {_format(values[k])}\n" for k in KEYS)


def write_snapshot(path, values):
    Path(path).write_text(snapshot_text(values), encoding="utf-8")


def config_hash(values) -> str:
    return hashlib.sha256(snapshot_text(values).encode()).hexdigest()[:12]


def runs_root() -> Path:
    return Path(os.environ.get("VUGA_RUNS_DIR", "runs"))


def run_dir_for(command, values) -> Path:
    """Content-addressed run directory ``<root>/<command>-<config hash>-s<seed>``."""
    return runs_root() / f"{command}-{config_hash(values)}-s{values['seed']}"

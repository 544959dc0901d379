"""Run configuration: YAML file, environment overrides, CLI flags.

Precedence, lowest first: built-in defaults, config file, environment
variables ``LNMET_<SECTION>__<KEY>`` (values parsed as YAML scalars), then
command-line flags.
"""

from __future__ import annotations

import copy
import hashlib
import os
from pathlib import Path

import yaml

from .errors import ConfigError

ENV_PREFIX = "LNMET_"

DEFAULTS: dict = {
    "seed": 0,
    "fold": 0,
    "threads": 1,
    "phantom": {
        "n_cases": 20,
        "dims": [96, 96, 96],
        "spacing": [0.68, 0.68, 0.80],
        "positive_rate": 0.5,
    },
    "split": {"k": 5, "stratified": True, "val_fraction": 0.2},
    "attention": {"enabled": True, "smooth": 3.0, "params": "calibrated"},
    "sampler": {"patch_shape": [32, 32, 32], "batch_size": 4, "quota_rule": "more_than_third", "debug_log": False},
    "train": {"steps": 300, "lr": 0.03, "momentum": 0.95, "weight_decay": 1e-4, "loss_form": "paper",
              "alpha": 0.5, "beta": 1.5, "channels": [8, 16], "poly_power": 0.9},
    "inference": {"window": [64, 64, 64]},
    "identify": {"crop_shape": [32, 32, 32], "epochs": 30, "lr": 0.01, "threshold": 0.5},
    "evaluate": {"iou_thresh": 0.30, "averaging": "per_case"},
    "aggregate": {"train_vmax": "gt", "infer_vmax": "predicted", "feature": "max"},
    "fusion": {"patch_size": 32, "k": 8, "epochs": 40, "lr": 0.003},
    "stats": {"bootstrap_iters": 1000, "protocol": "bootstrap_wilcoxon"},
}

_CHOICES = {
    ("train", "loss_form"): {"paper", "standard"},
    ("evaluate", "averaging"): {"per_case", "pooled"},
    ("aggregate", "train_vmax"): {"gt", "predicted"},
    ("aggregate", "infer_vmax"): {"gt", "predicted"},
    ("aggregate", "feature"): {"max"},
    ("attention", "params"): {"calibrated", "default"},
    ("sampler", "quota_rule"): {"more_than_third", "none"},
    ("stats", "protocol"): {"bootstrap_wilcoxon", "per_case"},
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path + k!r} must be a mapping")
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out: dict = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        parts = name[len(ENV_PREFIX):].lower().split("__")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{name}: cannot parse value {raw!r}") from exc
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return out


def validate(cfg: dict) -> dict:
    for (section, key), allowed in _CHOICES.items():
        if cfg[section][key] not in allowed:
            raise ConfigError(f"{section}.{key} must be one of {sorted(allowed)}, got {cfg[section][key]!r}")
    for key in ("seed", "fold", "threads"):
        if not isinstance(cfg[key], int) or isinstance(cfg[key], bool):
            raise ConfigError(f"{key} must be an integer")
    if cfg["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    if not 0 <= cfg["fold"] < cfg["split"]["k"]:
        raise ConfigError(f"fold must lie in [0, {cfg['split']['k']})")
    if cfg["train"]["steps"] < 1:
        raise ConfigError("train.steps must be >= 1")
    if cfg["train"]["poly_power"] < 0:
        raise ConfigError("train.poly_power must be >= 0")
    return cfg


def load_config(path=None, flags: dict | None = None, environ=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = _merge(cfg, loaded)
    cfg = _merge(cfg, env_overrides(environ))
    if flags:
        cfg = _merge(cfg, flags)
    return validate(cfg)


def dump_config(cfg: dict, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg, sort_keys=True))


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_sha256(path) -> str:
    """Content hash of a file, or of every file below a directory."""
    p = Path(path)
    if p.is_file():
        return file_sha256(p)
    h = hashlib.sha256()
    for f in sorted(q for q in p.rglob("*") if q.is_file()):
        h.update(str(f.relative_to(p)).encode())
        h.update(file_sha256(f).encode())
    return h.hexdigest()
